//! Stationary points of a minimax quadratic, labeled by the local Nash and
//! local minimax tests and by the curvature of Φ.
//!
//! cargo run --example minimax_classify

use bilevel_escape::diagnostics::{classify_minimax_point, default_stationarity_tol};
use bilevel_escape::prelude::*;
use bilevel_escape::solvers::min_eigenvalue;
use bilevel_escape::testbed::{gaussian_vector, random_minimax};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_minimax(2, 2, 0.5, &mut rng)?;
    let mut found: Vec<Vector> = Vec::new();
    for _ in 0..40 {
        let mut x = gaussian_vector(2, &mut rng) * 1.5;
        for _ in 0..60 {
            let Some(step) = m.hess_phi(&x).lu().solve(&m.grad_phi(&x)) else {
                break;
            };
            x -= step;
        }
        if m.grad_phi(&x).norm() <= 1e-11 && found.iter().all(|q| (q - &x).norm() > 1e-7) {
            found.push(x);
        }
    }
    println!("{:>24} {:>11} {:>6} {:>8}", "x", "lambda_min", "nash", "minimax");
    for x in &found {
        let c = classify_minimax_point(&m, x, &m.y_star(x), default_stationarity_tol(0.0))?;
        let (lmin, _) = min_eigenvalue(&m.hess_phi(x), 1e-12)?;
        println!(
            "({:>10.5}, {:>10.5}) {lmin:>11.3e} {:>6} {:>8}",
            x[0], x[1], c.strict_local_nash, c.strict_local_minimax
        );
    }
    Ok(())
}
