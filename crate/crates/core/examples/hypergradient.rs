//! AID and GDmax hypergradients against the closed form, as the inner depths grow.
//!
//! cargo run --example hypergradient

use bilevel_escape::prelude::*;
use bilevel_escape::testbed::{gaussian_vector, random_minimax, random_quadratic};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_quadratic(5, 8, 20.0, 0.1, &mut rng)?;
    let x = gaussian_vector(5, &mut rng);
    let truth = p.grad_phi(&x);
    let tau = 1.0 / p.constants().ell();

    println!("AID on a quadratic-coupled problem, kappa = 20");
    println!("{:>5} {:>5} {:>12}", "D", "N", "rel. error");
    for depth in [1, 5, 20, 50, 200] {
        let (est, _) = aid_estimate(&p, &x, &WarmStartState::zeros(&p), tau, depth, depth)?;
        println!(
            "{depth:>5} {depth:>5} {:>12.3e}",
            (est.grad - &truth).norm() / truth.norm()
        );
    }

    let m = random_minimax(3, 4, 0.2, &mut rng)?;
    let x = gaussian_vector(3, &mut rng);
    let truth = m.grad_phi(&x);
    let tau = 1.0 / m.constants().ell();
    println!("\nGDmax on a minimax quadratic");
    for depth in [1, 5, 20, 50, 200] {
        let (est, _) = gdmax_estimate(&m, &x, &WarmStartState::zeros(&m), tau, depth)?;
        println!("{depth:>5} {:>12.3e}", (est.grad - &truth).norm() / truth.norm());
    }
    Ok(())
}
