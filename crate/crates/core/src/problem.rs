//! Bilevel problem oracles, regularity constants and ground-truth references.
//!
//! A bilevel problem minimizes `Φ(x) = f(x, y*(x))` where `y*(x)` is the unique
//! minimizer of a lower-level objective `g(x, ·)` that is strongly convex in `y`.
//! Algorithms only ever touch the first-order oracles and the two second-order
//! products (Hessian-vector and Jacobian-vector) of [`BilevelProblem`]. The
//! reference routines in this module assemble dense quantities from the same
//! oracles and are meant as test oracles, not production paths.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest lower-level dimension for which the dense reference solve is allowed.
pub const DENSE_CAP: usize = 512;

/// Default central finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Default floor applied to ρ_φ before it is used in a denominator.
pub const DEFAULT_RHO_FLOOR: f64 = 1e-3;

/// Regularity constants of a bilevel problem.
///
/// `mu` is the strong-convexity modulus of `g` in `y`, `ell` the gradient
/// Lipschitz constant of `f` and `g`, `rho` the Hessian/Jacobian Lipschitz
/// constant, `nu` the Lipschitz constant of the third derivatives of `g`,
/// `m_bound` a bound on `‖∇f‖`, and `sigma2` the gradient variance of the
/// stochastic lower level (zero for deterministic problems).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstants", into = "RawConstants")]
pub struct SmoothnessConstants {
    mu: f64,
    ell: f64,
    rho: f64,
    nu: f64,
    m_bound: f64,
    sigma2: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    mu: f64,
    ell: f64,
    #[serde(default)]
    rho: f64,
    #[serde(default)]
    nu: f64,
    #[serde(default)]
    m_bound: f64,
    #[serde(default)]
    sigma2: f64,
}

impl TryFrom<RawConstants> for SmoothnessConstants {
    type Error = Error;

    fn try_from(r: RawConstants) -> Result<Self> {
        SmoothnessConstants::new(r.mu, r.ell, r.rho, r.nu, r.m_bound, r.sigma2)
    }
}

impl From<SmoothnessConstants> for RawConstants {
    fn from(c: SmoothnessConstants) -> Self {
        RawConstants {
            mu: c.mu,
            ell: c.ell,
            rho: c.rho,
            nu: c.nu,
            m_bound: c.m_bound,
            sigma2: c.sigma2,
        }
    }
}

impl SmoothnessConstants {
    pub fn new(mu: f64, ell: f64, rho: f64, nu: f64, m_bound: f64, sigma2: f64) -> Result<Self> {
        let all = [mu, ell, rho, nu, m_bound, sigma2];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConstants(
                "all constants must be finite and nonnegative".into(),
            ));
        }
        if mu <= 0.0 {
            return Err(Error::InvalidConstants(format!("mu must be positive, got {mu}")));
        }
        if ell < mu {
            return Err(Error::InvalidConstants(format!(
                "ell ({ell}) must be at least mu ({mu})"
            )));
        }
        Ok(Self {
            mu,
            ell,
            rho,
            nu,
            m_bound,
            sigma2,
        })
    }

    /// Constants with only `mu` and `ell` set; the rest are zero.
    pub fn basic(mu: f64, ell: f64) -> Result<Self> {
        Self::new(mu, ell, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn ell(&self) -> f64 {
        self.ell
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn m_bound(&self) -> f64 {
        self.m_bound
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Returns a copy with the variance bound replaced.
    pub fn with_sigma2(mut self, sigma2: f64) -> Result<Self> {
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(Error::InvalidConstants("sigma2 must be finite and nonnegative".into()));
        }
        self.sigma2 = sigma2;
        Ok(self)
    }
}

/// Condition number `ℓ/μ` of the lower-level problem.
pub fn compute_kappa(c: &SmoothnessConstants) -> f64 {
    c.ell / c.mu
}

/// Gradient Lipschitz constant of Φ.
///
/// `L_φ = ℓ + (2ℓ² + ρM²)/μ + (ℓ³ + 2ρℓM)/μ² + ρℓ²M/μ³`
pub fn compute_l_phi(c: &SmoothnessConstants) -> f64 {
    let (l, mu, rho, m) = (c.ell, c.mu, c.rho, c.m_bound);
    l + (2.0 * l * l + rho * m * m) / mu + (l.powi(3) + 2.0 * rho * l * m) / mu.powi(2) + rho * l * l * m / mu.powi(3)
}

/// Hessian Lipschitz constant of Φ, a three-bracket sum weighted by powers of `1 + ℓ/μ`.
pub fn compute_rho_phi(c: &SmoothnessConstants) -> f64 {
    let (l, mu, rho, nu, m) = (c.ell, c.mu, c.rho, c.nu, c.m_bound);
    let s = 1.0 + l / mu;
    let first = rho
        + (2.0 * l * rho + m * nu) / mu
        + (2.0 * m * l * nu + rho * l * l) / mu.powi(2)
        + m * l * l * nu / mu.powi(3);
    let second = 2.0 * l * rho / mu
        + (4.0 * m * rho * rho + 2.0 * l * l * rho) / mu.powi(2)
        + 2.0 * m * l * rho * rho / mu.powi(3);
    let third = m * rho * rho / mu.powi(2) + rho * l / mu;
    first * s + second * s * s + third * s.powi(3)
}

/// Constants derived from [`SmoothnessConstants`]: κ, L_φ and ρ_φ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub kappa: f64,
    pub l_phi: f64,
    pub rho_phi: f64,
}

impl DerivedConstants {
    pub fn from_constants(c: &SmoothnessConstants) -> Self {
        Self {
            kappa: compute_kappa(c),
            l_phi: compute_l_phi(c),
            rho_phi: compute_rho_phi(c),
        }
    }

    /// `max(ρ_φ, floor)`, the value every consumer divides by.
    pub fn rho_phi_eff(&self, floor: f64) -> f64 {
        self.rho_phi.max(floor)
    }
}

/// First- and second-order oracles of a bilevel problem.
///
/// `jvp_xy_g` maps an `n`-vector `v` to the `d`-vector `∇²_{xy} g(x, y) v`.
pub trait BilevelProblem {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;

    fn f(&self, x: &Vector, y: &Vector) -> f64;
    fn g(&self, x: &Vector, y: &Vector) -> f64;
    fn grad_x_f(&self, x: &Vector, y: &Vector) -> Vector;
    fn grad_y_f(&self, x: &Vector, y: &Vector) -> Vector;
    fn grad_y_g(&self, x: &Vector, y: &Vector) -> Vector;
    fn hvp_yy_g(&self, x: &Vector, y: &Vector, v: &Vector) -> Vector;
    fn jvp_xy_g(&self, x: &Vector, y: &Vector, v: &Vector) -> Vector;

    fn constants(&self) -> &SmoothnessConstants;

    fn exact(&self) -> Option<&dyn ExactOracles> {
        None
    }

    fn second_order(&self) -> Option<&dyn SecondOrderOracles> {
        None
    }

    /// True when `g = -f`, so that the GDmax estimator applies.
    fn is_minimax(&self) -> bool {
        false
    }
}

/// Closed-form ground truth available on testbed problems.
pub trait ExactOracles {
    fn y_star(&self, x: &Vector) -> Vector;
    fn phi(&self, x: &Vector) -> f64;
    fn grad_phi(&self, x: &Vector) -> Vector;
    fn hess_phi(&self, x: &Vector) -> Matrix;
}

/// Second-order blocks of `f` and the derivatives of `y*` needed to assemble ∇²Φ.
///
/// Shapes: `hess_xy_f` and `ystar_jacobian` are `d × n`; `ystar_curvature(x, w)`
/// returns the `d × d` matrix `Σ_i w_i ∇²_x y*_i(x)`.
pub trait SecondOrderOracles {
    fn hess_xx_f(&self, x: &Vector, y: &Vector) -> Matrix;
    fn hess_xy_f(&self, x: &Vector, y: &Vector) -> Matrix;
    fn hess_yy_f(&self, x: &Vector, y: &Vector) -> Matrix;
    fn ystar_jacobian(&self, x: &Vector) -> Matrix;
    fn ystar_curvature(&self, x: &Vector, w: &Vector) -> Matrix;
}

/// Wrapper that hides the exact and second-order oracles of a problem, forcing
/// the reference routines onto their numerical paths.
pub struct Blind<'a, P: ?Sized>(pub &'a P);

impl<P: BilevelProblem + ?Sized> BilevelProblem for Blind<'_, P> {
    fn dim_x(&self) -> usize {
        self.0.dim_x()
    }
    fn dim_y(&self) -> usize {
        self.0.dim_y()
    }
    fn f(&self, x: &Vector, y: &Vector) -> f64 {
        self.0.f(x, y)
    }
    fn g(&self, x: &Vector, y: &Vector) -> f64 {
        self.0.g(x, y)
    }
    fn grad_x_f(&self, x: &Vector, y: &Vector) -> Vector {
        self.0.grad_x_f(x, y)
    }
    fn grad_y_f(&self, x: &Vector, y: &Vector) -> Vector {
        self.0.grad_y_f(x, y)
    }
    fn grad_y_g(&self, x: &Vector, y: &Vector) -> Vector {
        self.0.grad_y_g(x, y)
    }
    fn hvp_yy_g(&self, x: &Vector, y: &Vector, v: &Vector) -> Vector {
        self.0.hvp_yy_g(x, y, v)
    }
    fn jvp_xy_g(&self, x: &Vector, y: &Vector, v: &Vector) -> Vector {
        self.0.jvp_xy_g(x, y, v)
    }
    fn constants(&self) -> &SmoothnessConstants {
        self.0.constants()
    }
    fn is_minimax(&self) -> bool {
        self.0.is_minimax()
    }
}

/// Iteration cap for the gradient-descent fallback of [`reference_ystar`].
pub const REFERENCE_GD_CAP: usize = 500_000;

/// Lower-level solution to tolerance `‖∇_y g(x, y)‖ ≤ tol`.
///
/// Uses the analytic minimizer when the problem has one, otherwise gradient
/// descent from the origin with step `1/ℓ`.
pub fn reference_ystar<P: BilevelProblem + ?Sized>(p: &P, x: &Vector, tol: f64) -> Result<Vector> {
    if tol <= 0.0 {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    if let Some(ex) = p.exact() {
        return Ok(ex.y_star(x));
    }
    let step = 1.0 / p.constants().ell();
    let mut y = Vector::zeros(p.dim_y());
    let mut residual = f64::INFINITY;
    for _ in 0..REFERENCE_GD_CAP {
        let grad = p.grad_y_g(x, &y);
        residual = grad.norm();
        if !residual.is_finite() {
            return Err(Error::NumericalBlowup("reference_ystar"));
        }
        if residual <= tol {
            return Ok(y);
        }
        y.axpy(-step, &grad, 1.0);
    }
    Err(Error::NonConvergence { residual })
}

/// `Φ(x) = f(x, y*(x))` with `y*` from [`reference_ystar`].
pub fn reference_phi<P: BilevelProblem + ?Sized>(p: &P, x: &Vector, tol: f64) -> Result<f64> {
    let y = reference_ystar(p, x, tol)?;
    Ok(p.f(x, &y))
}

/// Dense `∇²_y g(x, y)` assembled column by column from Hessian-vector products
/// and symmetrized.
pub fn assemble_lower_hessian<P: BilevelProblem + ?Sized>(p: &P, x: &Vector, y: &Vector) -> Result<Matrix> {
    let n = p.dim_y();
    if n > DENSE_CAP {
        return Err(Error::DenseCapExceeded { dim: n, cap: DENSE_CAP });
    }
    let mut h = Matrix::zeros(n, n);
    let mut e = Vector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        h.set_column(j, &p.hvp_yy_g(x, y, &e));
        e[j] = 0.0;
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Hypergradient `∇Φ(x) = ∇_x f − ∇²_{xy} g · (∇²_y g)⁻¹ ∇_y f` at `y*(x)`,
/// using a dense Cholesky factorization of the lower-level Hessian.
pub fn reference_hypergradient<P: BilevelProblem + ?Sized>(p: &P, x: &Vector, tol: f64) -> Result<Vector> {
    if p.dim_y() > DENSE_CAP {
        return Err(Error::DenseCapExceeded {
            dim: p.dim_y(),
            cap: DENSE_CAP,
        });
    }
    let y = reference_ystar(p, x, tol)?;
    let h = assemble_lower_hessian(p, x, &y)?;
    let chol = Cholesky::new(h).ok_or(Error::SingularSystem)?;
    let v = chol.solve(&p.grad_y_f(x, &y));
    Ok(p.grad_x_f(x, &y) - p.jvp_xy_g(x, &y, &v))
}

/// Tolerance used for the inner reference solves of the finite-difference Hessian.
pub const FD_INNER_TOL: f64 = 1e-12;

/// ∇²Φ(x) by central differences of [`reference_hypergradient`], symmetrized.
pub fn reference_phi_hessian<P: BilevelProblem + ?Sized>(p: &P, x: &Vector, h: f64) -> Result<Matrix> {
    if h <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let d = p.dim_x();
    let mut hess = Matrix::zeros(d, d);
    for j in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let gp = reference_hypergradient(p, &xp, FD_INNER_TOL)?;
        let gm = reference_hypergradient(p, &xm, FD_INNER_TOL)?;
        hess.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// ∇²Φ(x) assembled from the second-order blocks of `f` and the derivatives of `y*`:
///
/// `∇²_x f + J ∇²_{yx} f + (J ∇²_{yx} f)ᵀ + Σ_i (∇_y f)_i ∇²y*_i + J ∇²_y f Jᵀ`
///
/// with `J = ∂y*/∂x` of shape `d × n`.
pub fn analytic_phi_hessian<P: BilevelProblem + ?Sized>(p: &P, x: &Vector) -> Result<Matrix> {
    let so = p.second_order().ok_or(Error::NoExactOracles)?;
    let y = reference_ystar(p, x, FD_INNER_TOL)?;
    let j = so.ystar_jacobian(x);
    let cross = &j * so.hess_xy_f(x, &y).transpose();
    let mut hess = so.hess_xx_f(x, &y) + &cross + cross.transpose();
    hess += so.ystar_curvature(x, &p.grad_y_f(x, &y));
    hess += &j * so.hess_yy_f(x, &y) * j.transpose();
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Central finite-difference gradient of a scalar function.
pub fn finite_difference_gradient<F: FnMut(&Vector) -> f64>(mut func: F, x: &Vector, h: f64) -> Vector {
    let mut g = Vector::zeros(x.len());
    let mut z = x.clone();
    for i in 0..x.len() {
        let xi = z[i];
        z[i] = xi + h;
        let fp = func(&z);
        z[i] = xi - h;
        let fm = func(&z);
        z[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(mu: f64, ell: f64, rho: f64, nu: f64, m: f64) -> SmoothnessConstants {
        SmoothnessConstants::new(mu, ell, rho, nu, m, 0.0).unwrap()
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(compute_kappa(&consts(2.0, 10.0, 0.0, 0.0, 0.0)), 5.0);
        assert_eq!(compute_kappa(&consts(1.0, 1.0, 0.0, 0.0, 0.0)), 1.0);
        assert_eq!(compute_kappa(&consts(0.5, 7.0, 0.0, 0.0, 0.0)), 14.0);
    }

    #[test]
    fn l_phi_examples() {
        assert_eq!(compute_l_phi(&consts(1.0, 1.0, 0.0, 0.0, 0.0)), 4.0);
        assert_eq!(compute_l_phi(&consts(1.0, 2.0, 1.0, 0.0, 1.0)), 27.0);
        assert_eq!(compute_l_phi(&consts(1.0, 1.0, 1.0, 0.0, 0.0)), 4.0);
    }

    #[test]
    fn rho_phi_examples() {
        assert_eq!(compute_rho_phi(&consts(1.0, 1.0, 1.0, 0.0, 0.0)), 32.0);
        assert_eq!(compute_rho_phi(&consts(0.7, 3.0, 0.0, 0.0, 5.0)), 0.0);
        assert_eq!(compute_rho_phi(&consts(1.0, 1.0, 0.0, 1.0, 1.0)), 8.0);
    }

    #[test]
    fn rejects_invalid_constants() {
        assert!(SmoothnessConstants::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(SmoothnessConstants::new(2.0, 1.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(SmoothnessConstants::new(1.0, 1.0, -1.0, 0.0, 0.0, 0.0).is_err());
        assert!(SmoothnessConstants::new(1.0, f64::INFINITY, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn constants_json_validates() {
        let ok: SmoothnessConstants = serde_json::from_str(r#"{"mu":1,"ell":2}"#).unwrap();
        assert_eq!(ok.ell(), 2.0);
        assert!(serde_json::from_str::<SmoothnessConstants>(r#"{"mu":0,"ell":2}"#).is_err());
        assert!(serde_json::from_str::<SmoothnessConstants>(r#"{"mu":1,"ell":2,"x":1}"#).is_err());
    }

    #[test]
    fn rho_floor_applies() {
        let dc = DerivedConstants::from_constants(&consts(1.0, 1.0, 0.0, 0.0, 0.0));
        assert_eq!(dc.rho_phi, 0.0);
        assert_eq!(dc.rho_phi_eff(DEFAULT_RHO_FLOOR), 1e-3);
        assert!(dc.l_phi >= 1.0);
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let x = Vector::from_vec(vec![1.0, -2.0]);
        let g = finite_difference_gradient(|z| 0.5 * z.norm_squared() + z[0] * z[1], &x, 1e-5);
        assert!((g[0] - (1.0 - 2.0)).abs() < 1e-8);
        assert!((g[1] - (-2.0 + 1.0)).abs() < 1e-8);
    }
}
