//! Numerical kernels: inner loops, CG, Neumann series, eigenvalues, sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_finite, Error, Result};
use crate::problem::{BilevelProblem, Matrix, Vector};
use crate::testbed::FiniteSumBilevel;

pub use crate::problem::finite_difference_gradient;

/// Residual below which CG stops early.
pub const CG_EARLY_EXIT: f64 = 1e-14;

/// Iteration cap of [`min_eigenvalue`].
pub const POWER_ITERATION_CAP: usize = 200_000;

/// `D` gradient steps on `g(x, ·)` from `y0` with step `tau`.
pub fn inner_gd<P: BilevelProblem + ?Sized>(p: &P, x: &Vector, y0: &Vector, tau: f64, d: usize) -> Result<Vector> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("inner step must be positive".into()));
    }
    let mut y = y0.clone();
    for _ in 0..d {
        let g = p.grad_y_g(x, &y);
        y.axpy(-tau, &g, 1.0);
        check_finite(&y, "inner_gd")?;
    }
    Ok(y)
}

/// Stochastic gradient steps with one prescribed batch per step.
pub fn inner_sgd_batches(
    fs: &FiniteSumBilevel,
    x: &Vector,
    y0: &Vector,
    alpha: f64,
    batches: &[Vec<usize>],
) -> Result<Vector> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig("SGD step must be positive".into()));
    }
    let mut y = y0.clone();
    for batch in batches {
        let g = fs.grad_y_g_batch(x, &y, batch);
        y.axpy(-alpha, &g, 1.0);
        check_finite(&y, "inner_sgd")?;
    }
    Ok(y)
}

/// `D` SGD steps, each on a fresh batch of `S` indices drawn with replacement.
pub fn inner_sgd<R: Rng + ?Sized>(
    fs: &FiniteSumBilevel,
    x: &Vector,
    y0: &Vector,
    alpha: f64,
    d: usize,
    s: usize,
    rng: &mut R,
) -> Result<Vector> {
    if s == 0 {
        return Err(Error::InvalidConfig("batch size must be ≥ 1".into()));
    }
    let m = fs.num_components();
    let batches: Vec<Vec<usize>> = (0..d)
        .map(|_| (0..s).map(|_| rng.random_range(0..m)).collect())
        .collect();
    inner_sgd_batches(fs, x, y0, alpha, &batches)
}

#[derive(Clone, Debug)]
pub struct CgReport {
    pub solution: Vector,
    pub iterations: usize,
    /// `‖H·solution − b‖`, recomputed after the last iteration.
    pub residual_norm: f64,
}

/// Conjugate gradient on `H v = b` from `v0`, at most `n_iters` iterations.
pub fn cg_solve<F>(mut hvp: F, b: &Vector, v0: &Vector, n_iters: usize) -> Result<CgReport>
where
    F: FnMut(&Vector) -> Vector,
{
    let mut v = v0.clone();
    let mut r = b - hvp(&v);
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut iterations = 0;
    while iterations < n_iters && rr.sqrt() >= CG_EARLY_EXIT {
        let hp = hvp(&p);
        let curvature = p.dot(&hp);
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite { curvature });
        }
        let step = rr / curvature;
        v.axpy(step, &p, 1.0);
        r.axpy(-step, &hp, 1.0);
        let rr_new = r.norm_squared();
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
        iterations += 1;
        check_finite(&v, "cg_solve")?;
    }
    let residual_norm = (hvp(&v) - b).norm();
    Ok(CgReport {
        solution: v,
        iterations,
        residual_norm,
    })
}

/// CG error envelope `2√κ ((√κ − 1)/(√κ + 1))^N`.
pub fn cg_rate_bound(kappa: f64, n: usize) -> f64 {
    let s = kappa.sqrt();
    2.0 * s * ((s - 1.0) / (s + 1.0)).powi(n as i32)
}

/// Gradient-descent error envelope `(1 − μ/ℓ)^{D/2}`.
pub fn gd_rate_bound(mu: f64, ell: f64, d: usize) -> f64 {
    (1.0 - mu / ell).powf(d as f64 / 2.0)
}

/// Neumann-series approximation of `H⁻¹ v0`:
///
/// `v_Q = η Σ_{q=−1}^{Q−1} Π_{j=Q−q}^{Q} (I − η H_j) v0`.
///
/// `hess(j, v)` applies the batch Hessian `H_j` for `j = 1..=Q`. Suffix products
/// are accumulated so that `H_Q` acts first and each term costs one application.
pub fn neumann_inverse_hvp<F>(mut hess: F, v0: &Vector, eta: f64, q: usize) -> Result<Vector>
where
    F: FnMut(usize, &Vector) -> Vector,
{
    let mut w = v0.clone();
    let mut sum = v0.clone();
    for step in 0..q {
        let j = q - step;
        let hw = hess(j, &w);
        w.axpy(-eta, &hw, 1.0);
        sum += &w;
        check_finite(&sum, "neumann_inverse_hvp")?;
    }
    Ok(sum * eta)
}

/// Gershgorin bound on the spectral radius of a symmetric matrix.
pub fn gershgorin_bound(h: &Matrix) -> f64 {
    (0..h.nrows())
        .map(|i| h.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest eigenpair of a symmetric matrix by power iteration on `σI − H`,
/// with `σ` from a Gershgorin bound.
pub fn min_eigenvalue(h: &Matrix, tol: f64) -> Result<(f64, Vector)> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: h.ncols(),
        });
    }
    let sigma = gershgorin_bound(h);
    min_eigenvalue_op(|v| h * v, n, sigma, tol)
}

/// Matrix-free variant of [`min_eigenvalue`]. `sigma` must bound `‖H‖`.
pub fn min_eigenvalue_op<F>(mut op: F, dim: usize, sigma: f64, tol: f64) -> Result<(f64, Vector)>
where
    F: FnMut(&Vector) -> Vector,
{
    if dim == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    // Fixed start so results are reproducible.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    v /= v.norm();
    let shift = sigma.abs() + 1.0;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_ITERATION_CAP {
        let hv = op(&v);
        let lambda = v.dot(&hv);
        residual = (&hv - &v * lambda).norm();
        if residual <= tol {
            return Ok((lambda, v));
        }
        let mut next = &v * shift - hv;
        let nn = next.norm();
        if !(nn > 0.0) || !nn.is_finite() {
            return Err(Error::NumericalBlowup("min_eigenvalue"));
        }
        next /= nn;
        v = next;
    }
    Err(Error::NonConvergence { residual })
}

/// Uniform sample from the solid ball of the given radius.
pub fn sample_uniform_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vector {
    let dir = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nrm = dir.norm();
    let u: f64 = rng.random();
    if radius == 0.0 || nrm == 0.0 {
        return Vector::zeros(dim);
    }
    dir * (radius * u.powf(1.0 / dim as f64) / nrm)
}

/// ±1 with equal probability.
pub fn sample_rademacher<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}
