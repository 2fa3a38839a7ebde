use rand::Rng;

use crate::error::{check_finite, Result};
use crate::hypergrad::{aid_estimate, WarmStartState};
use crate::problem::{BilevelProblem, ExactOracles, Vector};
use crate::solvers::{inner_gd, sample_uniform_ball};

use super::PerturbConfig;

/// Stopping ratio: the test fires when the curvature form drops below `−(11519/12800) 𝓕`.
pub const NEON_STOP_RATIO: f64 = 11519.0 / 12800.0;

/// Inexact value and gradient of Φ as seen by iNEON.
pub trait HypergradOracle {
    fn dim(&self) -> usize;
    /// `(Φ̂(x̃), ∇̂Φ(x̃))` at the anchor point. Resets any warm-start chain.
    fn anchor(&mut self, x: &Vector) -> Result<(f64, Vector)>;
    fn grad(&mut self, x: &Vector) -> Result<Vector>;
    fn value(&mut self, x: &Vector) -> Result<f64>;
}

/// AID-backed oracle with `Φ̂(z) = f(z, y^D(z))`.
///
/// The inner `y` chain is warm-started across calls and restarts from `y0` after
/// the anchor. `value(z)` runs the `D` inner steps for `z` and keeps the result, so
/// the following `grad(z)` reuses the same `y^D(z)` instead of stepping again.
pub struct AidOracle<'a, P: ?Sized> {
    p: &'a P,
    tau: f64,
    d: usize,
    n: usize,
    y0: Vector,
    v0: Vector,
    state: WarmStartState,
    cached: Option<(Vector, Vector)>,
}

impl<'a, P: BilevelProblem + ?Sized> AidOracle<'a, P> {
    pub fn new(p: &'a P, y0: Vector, v0: Vector, tau: f64, d: usize, n: usize) -> Self {
        Self {
            p,
            tau,
            d,
            n,
            state: WarmStartState::new(y0.clone(), v0.clone()),
            y0,
            v0,
            cached: None,
        }
    }

    /// Inner settings `τ, D, N` taken from `cfg`.
    pub fn from_config(p: &'a P, y0: Vector, v0: Vector, cfg: &PerturbConfig) -> Self {
        Self::new(p, y0, v0, cfg.tau, cfg.d_inner, cfg.n_cg)
    }

    fn reset(&mut self) {
        self.state = WarmStartState::new(self.y0.clone(), self.v0.clone());
        self.cached = None;
    }
}

impl<P: BilevelProblem + ?Sized> HypergradOracle for AidOracle<'_, P> {
    fn dim(&self) -> usize {
        self.p.dim_x()
    }

    fn anchor(&mut self, x: &Vector) -> Result<(f64, Vector)> {
        self.reset();
        let (est, _) = aid_estimate(self.p, x, &self.state, self.tau, self.d, self.n)?;
        let phi = self.p.f(x, &est.y_inner);
        self.reset();
        Ok((phi, est.grad))
    }

    fn grad(&mut self, x: &Vector) -> Result<Vector> {
        let (est, next) = match self.cached.take() {
            Some((cx, cy)) if &cx == x => {
                let start = WarmStartState::new(cy, self.state.v_prev.clone());
                aid_estimate(self.p, x, &start, self.tau, 0, self.n)?
            }
            _ => aid_estimate(self.p, x, &self.state, self.tau, self.d, self.n)?,
        };
        self.state = next;
        Ok(est.grad)
    }

    fn value(&mut self, x: &Vector) -> Result<f64> {
        let y = inner_gd(self.p, x, &self.state.y_prev, self.tau, self.d)?;
        let v = self.p.f(x, &y);
        self.cached = Some((x.clone(), y));
        Ok(v)
    }
}

/// Exact Φ and ∇Φ.
pub struct ExactOracle<'a> {
    ex: &'a dyn ExactOracles,
    dim: usize,
}

impl<'a> ExactOracle<'a> {
    pub fn new(ex: &'a dyn ExactOracles, dim: usize) -> Self {
        Self { ex, dim }
    }
}

impl HypergradOracle for ExactOracle<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn anchor(&mut self, x: &Vector) -> Result<(f64, Vector)> {
        Ok((self.ex.phi(x), self.ex.grad_phi(x)))
    }
    fn grad(&mut self, x: &Vector) -> Result<Vector> {
        Ok(self.ex.grad_phi(x))
    }
    fn value(&mut self, x: &Vector) -> Result<f64> {
        Ok(self.ex.phi(x))
    }
}

/// Oracle from a pair of closures.
pub struct FnOracle<G, V> {
    dim: usize,
    grad: G,
    value: V,
}

impl<G, V> FnOracle<G, V>
where
    G: FnMut(&Vector) -> Vector,
    V: FnMut(&Vector) -> f64,
{
    pub fn new(dim: usize, grad: G, value: V) -> Self {
        Self { dim, grad, value }
    }
}

impl<G, V> HypergradOracle for FnOracle<G, V>
where
    G: FnMut(&Vector) -> Vector,
    V: FnMut(&Vector) -> f64,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn anchor(&mut self, x: &Vector) -> Result<(f64, Vector)> {
        Ok(((self.value)(x), (self.grad)(x)))
    }
    fn grad(&mut self, x: &Vector) -> Result<Vector> {
        Ok((self.grad)(x))
    }
    fn value(&mut self, x: &Vector) -> Result<f64> {
        Ok((self.value)(x))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeonResult {
    /// Unit direction, or the zero vector when the stopping test never fired.
    pub u: Vector,
    /// Number of `u` updates performed.
    pub iterations: usize,
}

impl NeonResult {
    pub fn is_zero(&self) -> bool {
        self.u.iter().all(|t| *t == 0.0)
    }
}

/// Negative-curvature extraction from noise with inexact gradients.
///
/// `u_0` is uniform in the ball of radius `η r`, then for `k = 0, …, 𝒯`
/// `u_{k+1} = u_k − η (∇̂Φ(x̃ + u_k) − ∇̂Φ(x̃))`. Returns `u_{k+1}/‖u_{k+1}‖` once
/// `Φ̂(x̃ + u_{k+1}) − Φ̂(x̃) − ∇̂Φ(x̃)ᵀ u_{k+1} ≤ −(11519/12800) 𝓕`, else zero.
pub fn ineon<O, R>(oracle: &mut O, x_tilde: &Vector, cfg: &PerturbConfig, rng: &mut R) -> Result<NeonResult>
where
    O: HypergradOracle + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let dim = oracle.dim();
    let mut u = sample_uniform_ball(dim, cfg.eta * cfg.r, rng);
    let (phi0, g0) = oracle.anchor(x_tilde)?;
    check_finite(&g0, "ineon")?;
    let threshold = -NEON_STOP_RATIO * cfg.f_script;
    for k in 0..=cfg.t_script {
        let gk = oracle.grad(&(x_tilde + &u))?;
        u -= (gk - &g0) * cfg.eta;
        check_finite(&u, "ineon")?;
        let probe = x_tilde + &u;
        let form = oracle.value(&probe)? - phi0 - g0.dot(&u);
        if form <= threshold {
            let nrm = u.norm();
            if nrm > 0.0 {
                return Ok(NeonResult {
                    u: u / nrm,
                    iterations: k + 1,
                });
            }
        }
    }
    Ok(NeonResult {
        u: Vector::zeros(dim),
        iterations: cfg.t_script + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::escape::{theory_params, ParamMode};
    use crate::problem::{Matrix, SmoothnessConstants};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad_oracle(h: Matrix) -> FnOracle<impl FnMut(&Vector) -> Vector, impl FnMut(&Vector) -> f64> {
        let h2 = h.clone();
        FnOracle::new(
            h.nrows(),
            move |x: &Vector| &h * x,
            move |x: &Vector| 0.5 * x.dot(&(&h2 * x)),
        )
    }

    fn cfg_unit() -> PerturbConfig {
        // ρ_φ = 0 floored to 1, so √(ρ_φ ε) = √ε.
        let c = SmoothnessConstants::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        crate::escape::theory_params_with(
            &c,
            1e-4,
            2.0,
            0.1,
            ParamMode::Ineon,
            &crate::escape::ParamOptions {
                rho_floor: 1.0,
                c_order: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn convex_quadratic_returns_zero() {
        let cfg = cfg_unit();
        for seed in 0..20 {
            let mut o = quad_oracle(Matrix::identity(3, 3));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = ineon(&mut o, &Vector::zeros(3), &cfg, &mut rng).unwrap();
            assert!(r.is_zero());
        }
    }

    #[test]
    fn saddle_quadratic_finds_negative_direction() {
        let cfg = cfg_unit();
        let h = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        let mut hits = 0;
        for seed in 0..100 {
            let mut o = quad_oracle(h.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = ineon(&mut o, &Vector::zeros(2), &cfg, &mut rng).unwrap();
            if !r.is_zero() {
                assert!((r.u.norm() - 1.0).abs() <= 1e-12);
                if r.u[1].abs() >= 0.99 {
                    hits += 1;
                }
            }
        }
        assert!(hits >= 90, "{hits}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = theory_params(
            &SmoothnessConstants::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0).unwrap(),
            1e-2,
            2.0,
            0.1,
            ParamMode::Ineon,
        )
        .unwrap();
        let h = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, -3.0, 1.0]));
        let run = || {
            let mut o = quad_oracle(h.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            ineon(&mut o, &Vector::zeros(3), &cfg, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }
}
