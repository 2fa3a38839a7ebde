//! Hypergradient estimators: GDmax, AID with warm starts, and stocBiO.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::problem::{BilevelProblem, DerivedConstants, SmoothnessConstants, Vector};
use crate::solvers::{cg_solve, inner_gd, neumann_inverse_hvp};
use crate::testbed::{BatchPlan, FiniteSumBilevel};

/// Inner iterates carried from one outer iteration to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmStartState {
    pub y_prev: Vector,
    pub v_prev: Vector,
}

impl WarmStartState {
    pub fn new(y0: Vector, v0: Vector) -> Self {
        Self { y_prev: y0, v_prev: v0 }
    }

    pub fn zeros<P: BilevelProblem + ?Sized>(p: &P) -> Self {
        Self::new(Vector::zeros(p.dim_y()), Vector::zeros(p.dim_y()))
    }

    /// Warm start at the exact lower-level solution and linear-system solution.
    pub fn exact_at<P: BilevelProblem + ?Sized>(p: &P, x: &Vector) -> Result<Self> {
        let ex = p.exact().ok_or(Error::NoExactOracles)?;
        let y = ex.y_star(x);
        let h = crate::problem::assemble_lower_hessian(p, x, &y)?;
        let v = h.cholesky().ok_or(Error::SingularSystem)?.solve(&p.grad_y_f(x, &y));
        Ok(Self::new(y, v))
    }
}

/// Diagnostics of the inner solves.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct InnerResiduals {
    /// `‖∇_y g(x, y^D)‖`
    pub lower_grad: f64,
    /// `‖∇²_y g v^N − ∇_y f‖`, AID only.
    pub cg: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct HypergradEstimate {
    pub grad: Vector,
    pub y_inner: Vector,
    pub v_inner: Option<Vector>,
    pub residuals: InnerResiduals,
}

/// GDmax: `D` ascent steps on `f(x, ·)` (descent on `g = −f`), then `∇_x f(x, y^D)`.
pub fn gdmax_estimate<P: BilevelProblem + ?Sized>(
    p: &P,
    x: &Vector,
    state: &WarmStartState,
    tau: f64,
    d: usize,
) -> Result<(HypergradEstimate, WarmStartState)> {
    if !p.is_minimax() {
        return Err(Error::NotMinimax);
    }
    let y = inner_gd(p, x, &state.y_prev, tau, d)?;
    let grad = p.grad_x_f(x, &y);
    check_finite(&grad, "gdmax_estimate")?;
    let residuals = InnerResiduals {
        lower_grad: p.grad_y_g(x, &y).norm(),
        cg: None,
    };
    let next = WarmStartState::new(y.clone(), state.v_prev.clone());
    Ok((
        HypergradEstimate {
            grad,
            y_inner: y,
            v_inner: None,
            residuals,
        },
        next,
    ))
}

/// AID: `D` warm-started GD steps for `y`, `N` warm-started CG steps for
/// `∇²_y g v = ∇_y f`, then `∇_x f − ∇²_{xy} g v`.
pub fn aid_estimate<P: BilevelProblem + ?Sized>(
    p: &P,
    x: &Vector,
    state: &WarmStartState,
    tau: f64,
    d: usize,
    n: usize,
) -> Result<(HypergradEstimate, WarmStartState)> {
    let y = inner_gd(p, x, &state.y_prev, tau, d)?;
    let rhs = p.grad_y_f(x, &y);
    let cg = cg_solve(|v| p.hvp_yy_g(x, &y, v), &rhs, &state.v_prev, n)?;
    let grad = p.grad_x_f(x, &y) - p.jvp_xy_g(x, &y, &cg.solution);
    check_finite(&grad, "aid_estimate")?;
    let residuals = InnerResiduals {
        lower_grad: p.grad_y_g(x, &y).norm(),
        cg: Some(cg.residual_norm),
    };
    let next = WarmStartState::new(y.clone(), cg.solution.clone());
    Ok((
        HypergradEstimate {
            grad,
            y_inner: y,
            v_inner: Some(cg.solution),
            residuals,
        },
        next,
    ))
}

/// Step sizes, depths and batch sizes of the stochastic algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StocConfig {
    /// SGD step of the inner loop.
    pub alpha: f64,
    /// Outer step.
    pub beta: f64,
    pub d_inner: usize,
    pub q_neumann: usize,
    pub s_batch: usize,
    pub b_batch: usize,
    pub d_f: usize,
    pub d_g: usize,
    /// Multiplier on every order-level size.
    pub c_order: f64,
    /// Step of the Neumann series, at most 1/ℓ.
    pub eta_neumann: f64,
}

impl Default for StocConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.01,
            d_inner: 10,
            q_neumann: 10,
            s_batch: 16,
            b_batch: 4,
            d_f: 64,
            d_g: 64,
            c_order: 1.0,
            eta_neumann: 0.1,
        }
    }
}

impl StocConfig {
    /// Order-level sizes: `D = Q = c κ log(1/ε)`, `B = c κ² ε⁻²`, `S = c κ⁵ ε⁻²`,
    /// `D_f = c κ² ε⁻²`, `D_g = c κ⁶ ε⁻²`, with `α = 2/(ℓ+μ)`, `β = 1/(4 L_φ)`, `η = 1/ℓ`.
    pub fn theory(c: &SmoothnessConstants, dc: &DerivedConstants, epsilon: f64, c_order: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) || !(c_order > 0.0) {
            return Err(Error::InvalidConfig("need 0 < ε < 1 and c_order > 0".into()));
        }
        let k = dc.kappa;
        let log = (1.0 / epsilon).ln();
        let e2 = epsilon.powi(-2);
        let size = |v: f64| -> Result<usize> {
            // Fuzz keeps exact products like 3200.0000000000005 from rounding up.
            let s = (c_order * v * (1.0 - 1e-12)).ceil();
            if s > usize::MAX as f64 / 4.0 {
                return Err(Error::InvalidConfig(format!("batch size {s:e} is not representable")));
            }
            Ok((s as usize).max(1))
        };
        Ok(Self {
            alpha: 2.0 / (c.ell() + c.mu()),
            beta: 1.0 / (4.0 * dc.l_phi),
            d_inner: size(k * log)?,
            q_neumann: size(k * log)?,
            s_batch: size(k.powi(5) * e2)?,
            b_batch: size(k * k * e2)?,
            d_f: size(k * k * e2)?,
            d_g: size(k.powi(6) * e2)?,
            c_order,
            eta_neumann: 1.0 / c.ell(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let steps = [self.alpha, self.beta, self.eta_neumann, self.c_order];
        if steps.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("stochastic step sizes must be positive".into()));
        }
        if self.s_batch == 0 || self.b_batch == 0 || self.d_f == 0 || self.d_g == 0 {
            return Err(Error::InvalidConfig("batch sizes must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// stocBiO estimate at `(x, y_d)` with the batches of `plan`:
///
/// `v0 = ∇_y F(·; 𝒟_F)`, `v_Q` by the Neumann series over `ℬ_1..ℬ_Q`, and
/// `∇_x F(·; 𝒟_F) − ∇²_{xy} G(·; 𝒟_G) v_Q`.
pub fn stocbio_estimate(
    fs: &FiniteSumBilevel,
    x: &Vector,
    y_d: &Vector,
    plan: &BatchPlan,
    cfg: &StocConfig,
) -> Result<HypergradEstimate> {
    if plan.d_h.len() != cfg.q_neumann {
        return Err(Error::DimensionMismatch {
            expected: cfg.q_neumann,
            got: plan.d_h.len(),
        });
    }
    let mf = fs.mean_over(&plan.d_f);
    let mg = fs.mean_over(&plan.d_g);
    let hessians: Vec<_> = plan.d_h.iter().map(|set| fs.mean_over(set).q).collect();
    let v0 = mf.a.clone();
    let vq = neumann_inverse_hvp(|j, v| &hessians[j - 1] * v, &v0, cfg.eta_neumann, cfg.q_neumann)?;
    // ∇²_{xy} G = −B_Gᵀ for the quadratic lower level.
    let grad = fs.base().grad_x_f(x, y_d) + mg.b.transpose() * &vq;
    check_finite(&grad, "stocbio_estimate")?;
    let lower = &mg.q * y_d - &mg.b * x - &mg.c;
    Ok(HypergradEstimate {
        grad,
        y_inner: y_d.clone(),
        v_inner: Some(vq),
        residuals: InnerResiduals {
            lower_grad: lower.norm(),
            cg: None,
        },
    })
}

/// Upper envelope on the AID estimation error:
///
/// `[(1 + (ℓ/μ)(1 + 2√κ))(ℓ + ρM/μ)(1 − μ/ℓ)^{D/2} + 2ℓ√κ((√κ−1)/(√κ+1))^N] Γ₁`.
pub fn aid_error_bound(c: &SmoothnessConstants, dc: &DerivedConstants, d: usize, n: usize, gamma1: f64) -> f64 {
    let (l, mu, rho, m) = (c.ell(), c.mu(), c.rho(), c.m_bound());
    let sk = dc.kappa.sqrt();
    let lead = (1.0 + (l / mu) * (1.0 + 2.0 * sk)) * (l + rho * m / mu);
    let gd = (1.0 - mu / l).max(0.0).powf(d as f64 / 2.0);
    let cg = 2.0 * l * sk * ((sk - 1.0) / (sk + 1.0)).powi(n as i32);
    (lead * gd + cg) * gamma1
}

/// `Γ₁ = Δ̂ + 2η(κ² + 2κ + ρM(1+κ)/μ²)(M + ℓM/μ)`.
pub fn aid_gamma1(c: &SmoothnessConstants, dc: &DerivedConstants, eta: f64, delta_hat: f64) -> f64 {
    let k = dc.kappa;
    let (l, mu, rho, m) = (c.ell(), c.mu(), c.rho(), c.m_bound());
    delta_hat + 2.0 * eta * (k * k + 2.0 * k + rho * m * (1.0 + k) / (mu * mu)) * (m + l * m / mu)
}

/// Smallest `(D, N)` for which [`aid_error_bound`] is at most `target`.
pub fn aid_depths_for_target(
    c: &SmoothnessConstants,
    dc: &DerivedConstants,
    gamma1: f64,
    target: f64,
) -> (usize, usize) {
    let (l, mu, rho, m) = (c.ell(), c.mu(), c.rho(), c.m_bound());
    let sk = dc.kappa.sqrt();
    let lead = (1.0 + (l / mu) * (1.0 + 2.0 * sk)) * (l + rho * m / mu) * gamma1;
    // Each half of the budget goes to one term.
    let d = if mu >= l {
        1
    } else {
        (2.0 * (2.0 * lead / target).ln() / (1.0 / (1.0 - mu / l)).ln())
            .ceil()
            .max(0.0) as usize
    };
    let n = if sk <= 1.0 {
        1
    } else {
        ((4.0 * l * sk * gamma1 / target).ln() / ((sk + 1.0) / (sk - 1.0)).ln())
            .ceil()
            .max(0.0) as usize
    };
    (d, n)
}

/// GDmax error envelope `ℓ(1 − κ⁻¹)^{D/2} ‖y0 − y*(x)‖`.
pub fn gdmax_error_bound(c: &SmoothnessConstants, d: usize, displacement: f64) -> f64 {
    c.ell() * (1.0 - c.mu() / c.ell()).max(0.0).powf(d as f64 / 2.0) * displacement
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ExactOracles, Matrix};
    use crate::testbed::{gaussian_vector, random_quadratic, MinimaxQuadratic, QuadraticCoupledBilevel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_minimax() -> MinimaxQuadratic {
        // f = −½x² + 2xy − y²
        let s = |v: f64| Matrix::from_element(1, 1, v);
        MinimaxQuadratic::new(s(-1.0), s(2.0), s(2.0), 0.0, 1.0).unwrap()
    }

    #[test]
    fn gdmax_toy_example() {
        let p = toy_minimax();
        let x = Vector::from_element(1, 0.8);
        let tau = 1.0 / p.constants().ell();
        let (est, _) = gdmax_estimate(&p, &x, &WarmStartState::zeros(&p), tau, 500).unwrap();
        assert!((est.grad[0] - 0.8).abs() < 1e-12);
        let exact = WarmStartState::new(p.y_star(&x), Vector::zeros(1));
        let (est, _) = gdmax_estimate(&p, &x, &exact, tau, 0).unwrap();
        assert!((est.grad[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn gdmax_rejects_bilevel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_quadratic(2, 2, 2.0, 0.0, &mut rng).unwrap();
        let r = gdmax_estimate(&p, &Vector::zeros(2), &WarmStartState::zeros(&p), 0.1, 3);
        assert!(matches!(r, Err(Error::NotMinimax)));
    }

    #[test]
    fn aid_uncoupled_ignores_n() {
        let p = QuadraticCoupledBilevel::new(
            Matrix::identity(2, 2) * 2.0,
            Matrix::zeros(2, 2),
            Vector::zeros(2),
            Matrix::identity(2, 2),
            0.0,
            Vector::zeros(2),
            1.0,
        )
        .unwrap();
        let x = Vector::from_vec(vec![0.3, 0.4]);
        for n in [0, 1, 5] {
            let (est, _) = aid_estimate(&p, &x, &WarmStartState::zeros(&p), 0.5, 3, n).unwrap();
            assert_eq!(est.grad, p.grad_x_f(&x, &est.y_inner));
        }
    }

    #[test]
    fn aid_deep_inner_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_quadratic(5, 4, 10.0, 0.2, &mut rng).unwrap();
        let tau = 1.0 / p.constants().ell();
        for _ in 0..5 {
            let x = gaussian_vector(5, &mut rng) * 0.5;
            let (est, _) = aid_estimate(&p, &x, &WarmStartState::zeros(&p), tau, 2000, 200).unwrap();
            assert!((est.grad - p.grad_phi(&x)).norm() < 1e-8);
        }
    }

    #[test]
    fn aid_bound_envelopes_measured_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_quadratic(4, 3, 5.0, 0.1, &mut rng).unwrap();
        let c = *p.constants();
        let dc = DerivedConstants::from_constants(&c);
        let tau = 1.0 / c.ell();
        for (d, n) in [(1, 1), (3, 2), (10, 4), (30, 8)] {
            let x = gaussian_vector(4, &mut rng) * 0.5;
            let state = WarmStartState::zeros(&p);
            let ys = p.y_star(&x);
            let vs = p.q().clone().cholesky().unwrap().solve(p.a());
            let delta_hat = ys.norm() + vs.norm();
            let (est, _) = aid_estimate(&p, &x, &state, tau, d, n).unwrap();
            let err = (est.grad - p.grad_phi(&x)).norm();
            // Fresh start: the Γ₁ drift term does not apply, so Γ₁ = Δ̂.
            assert!(err <= aid_error_bound(&c, &dc, d, n, delta_hat));
        }
    }

    #[test]
    fn aid_bound_limits() {
        let c = SmoothnessConstants::new(1.0, 1.0, 0.5, 0.0, 1.0, 0.0).unwrap();
        let dc = DerivedConstants::from_constants(&c);
        assert_eq!(aid_error_bound(&c, &dc, 1, 1, 3.0), 0.0);
        let c = SmoothnessConstants::new(1.0, 9.0, 0.5, 0.0, 1.0, 0.0).unwrap();
        let dc = DerivedConstants::from_constants(&c);
        assert!(aid_error_bound(&c, &dc, 100_000, 100_000, 1.0) < 1e-300);
        let (d, n) = aid_depths_for_target(&c, &dc, 2.0, 1e-3);
        assert!(aid_error_bound(&c, &dc, d, n, 2.0) <= 1e-3);
    }

    #[test]
    fn theory_config_sizes() {
        let c = SmoothnessConstants::new(1.0, 2.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let dc = DerivedConstants::from_constants(&c);
        let s = StocConfig::theory(&c, &dc, 0.1, 1.0).unwrap();
        assert_eq!(s.d_inner, (2.0 * 10f64.ln()).ceil() as usize);
        assert_eq!(s.b_batch, 400);
        assert_eq!(s.s_batch, 3200);
        assert!((s.alpha - 2.0 / 3.0).abs() < 1e-15);
    }
}
