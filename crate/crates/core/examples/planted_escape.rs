//! Perturbed AID descent started exactly at a planted strict saddle.
//!
//! Without the perturbation the iterate never moves; with it, Φ drops by at
//! least 𝓕/2 within 𝒯 steps and the run ends near a local minimum.
//!
//! cargo run --release --example planted_escape

use bilevel_escape::diagnostics::escape_drops;
use bilevel_escape::prelude::*;
use bilevel_escape::testbed::PlantedConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let ps = PlantedSaddleProblem::build(&PlantedConfig {
        d: 4,
        n: 3,
        seed: 7,
        ..PlantedConfig::default()
    })?;
    let p = ps.problem();
    let cfg = theory_params(p.constants(), ps.eps_target, 2.0, 0.1, ParamMode::Alg1)?;
    println!(
        "eps {:.3e}  eta {:.3e}  r {:.3e}  T {}  F {:.3e}  D {}  N {}",
        cfg.epsilon, cfg.eta, cfg.r, cfg.t_script, cfg.f_script, cfg.d_inner, cfg.n_cg
    );
    let ws = WarmStartState::exact_at(p, &ps.x_saddle)?;
    let opts = RunOptions {
        certify: true,
        ..RunOptions::default()
    };

    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = perturbed_descent(
            p,
            &ps.x_saddle,
            &ws.y_prev,
            &ws.v_prev,
            &cfg,
            Estimator::Aid,
            20_000,
            &mut rng,
            &opts,
        )?;
        let phi = t.phi_series().unwrap_or_default();
        let first = escape_drops(&t, &cfg, &phi).first().copied();
        println!(
            "seed {seed}: {:?} after {} iterations, first drop {:?} (F/2 = {:.3e}), dist to nearest minimum {:.2e}",
            t.status,
            t.records.len(),
            first,
            cfg.f_script / 2.0,
            ps.dist_to_minima(&t.final_x())
        );
    }

    let mut still = cfg.clone();
    still.r = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = perturbed_descent(
        p,
        &ps.x_saddle,
        &ws.y_prev,
        &ws.v_prev,
        &still,
        Estimator::Exact,
        2_000,
        &mut rng,
        &RunOptions::default(),
    )?;
    println!("control with r = 0: moved {:.1e}", (t.final_x() - &ps.x_saddle).norm());
    Ok(())
}
