//! iNEON at a planted saddle and at a convex point.
//!
//! cargo run --release --example ineon

use bilevel_escape::prelude::*;
use bilevel_escape::solvers::min_eigenvalue;
use bilevel_escape::testbed::PlantedConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let ps = PlantedSaddleProblem::build(&PlantedConfig {
        d: 5,
        n: 3,
        seed: 2,
        gap: 40.0,
        ..PlantedConfig::default()
    })?;
    let p = ps.problem();
    let cfg = theory_params(p.constants(), ps.eps_target, 2.0, 0.1, ParamMode::Ineon)?;
    let bound = -(cfg.rho_phi_eff * cfg.epsilon).sqrt() / (40.0 * cfg.iota);

    for (label, x) in [("saddle", &ps.x_saddle), ("minimum", &ps.x_min)] {
        let h = p.hess_phi(x);
        let (lmin, _) = min_eigenvalue(&h, 1e-12)?;
        let ws = WarmStartState::exact_at(p, x)?;
        let mut oracle = AidOracle::from_config(p, ws.y_prev, ws.v_prev, &cfg);
        let res = ineon(&mut oracle, x, &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        if res.is_zero() {
            println!(
                "{label}: lambda_min {lmin:.3e}, no direction after {} steps",
                res.iterations
            );
        } else {
            println!(
                "{label}: lambda_min {lmin:.3e}, Rayleigh {:.3e} (bound {bound:.3e}) after {} steps",
                res.u.dot(&(&h * &res.u)),
                res.iterations
            );
        }
    }
    Ok(())
}
