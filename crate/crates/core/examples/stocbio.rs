//! stocBiO with iNEON on a finite-sum version of a planted saddle.
//!
//! cargo run --release --example stocbio

use bilevel_escape::prelude::*;
use bilevel_escape::testbed::PlantedConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let ps = PlantedSaddleProblem::build(&PlantedConfig {
        d: 3,
        n: 3,
        seed: 4,
        gap: 40.0,
        ..PlantedConfig::default()
    })?;
    let fs = FiniteSumBilevel::new(ps.problem().clone(), 64, 1e-5, 4)?;
    let c = *fs.constants();
    let cfg = theory_params(&c, ps.eps_target, 2.0, 0.1, ParamMode::Ineon)?;
    let scfg = StocConfig {
        alpha: 1.0 / c.ell(),
        beta: cfg.eta,
        d_inner: cfg.d_inner,
        q_neumann: 40,
        s_batch: 8,
        b_batch: 4,
        d_f: 64,
        d_g: 64,
        c_order: 1.0,
        eta_neumann: 1.0 / c.ell(),
    };
    let ws = WarmStartState::exact_at(&fs, &ps.x_saddle)?;
    for seed in 0..6 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = stocbio_ineon(
            &fs,
            &ps.x_saddle,
            &ws.y_prev,
            &cfg,
            &scfg,
            20_000,
            &mut rng,
            &RunOptions::default(),
        )?;
        let x = t.final_x();
        println!(
            "seed {seed}: {:?} after {} iterations, {} iNEON calls, dist {:.2e} (S = {:.2e}), deepest basin: {}",
            t.status,
            t.records.len(),
            t.neon_events.len(),
            ps.dist_to_minima(&x),
            cfg.s_script,
            (&x - &ps.x_min).norm() <= cfg.s_script
        );
    }
    Ok(())
}
