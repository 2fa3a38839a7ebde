//! Synthetic problems with closed-form Φ, ∇Φ and ∇²Φ.

mod finite_sum;
mod minimax;
mod planted;
mod quadratic;
mod spec;

pub use finite_sum::{sample_batches, BatchMean, BatchPlan, FiniteSumBilevel};
pub use minimax::{MinimaxQuadratic, MinimaxSpec};
pub use planted::{
    make_planted_saddle, make_quartic_ramp, PlantedConfig, PlantedSaddleProblem, QuarticRamp, RampConfig,
};
pub use quadratic::{QuadraticCoupledBilevel, QuadraticSpec};
pub use spec::{FiniteSumSpec, ProblemSpec, TestProblem};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::{BilevelProblem, Matrix, Vector};

/// Closed-form Φ, ∇Φ and ∇²Φ at a point.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub phi: f64,
    pub grad: Vector,
    pub hess: Matrix,
}

pub fn ground_truth<P: BilevelProblem + ?Sized>(p: &P, x: &Vector) -> Result<GroundTruth> {
    let ex = p.exact().ok_or(Error::NoExactOracles)?;
    Ok(GroundTruth {
        phi: ex.phi(x),
        grad: ex.grad_phi(x),
        hess: ex.hess_phi(x),
    })
}

pub fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-ish random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let qr = gaussian_matrix(n, n, rng).qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `V diag(eigs) Vᵀ` with a random orthogonal `V`, symmetrized.
pub fn with_spectrum<R: Rng + ?Sized>(eigs: &[f64], rng: &mut R) -> Matrix {
    let n = eigs.len();
    let v = random_orthogonal(n, rng);
    let d = Matrix::from_diagonal(&Vector::from_column_slice(eigs));
    let m = &v * d * v.transpose();
    (&m + m.transpose()) * 0.5
}

/// Random SPD matrix whose eigenvalues include both `lo` and `hi` (when n ≥ 2)
/// and are otherwise uniform in between.
pub fn random_spd<R: Rng + ?Sized>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    let eigs: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => lo,
            1 => hi,
            _ => rng.random_range(lo..=hi),
        })
        .collect();
    with_spectrum(&eigs, rng)
}

pub fn random_symmetric<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Matrix {
    let g = gaussian_matrix(n, n, rng);
    (&g + g.transpose()) * (0.5 * scale / (n as f64).sqrt())
}

/// Random quadratic-coupled problem with lower-level condition number `kappa_q`.
pub fn random_quadratic<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    kappa_q: f64,
    quartic: f64,
    rng: &mut R,
) -> Result<QuadraticCoupledBilevel> {
    let q = random_spd(n, 1.0, kappa_q.max(1.0), rng);
    let b = gaussian_matrix(n, d, rng) / (d as f64).sqrt();
    let c = gaussian_vector(n, rng);
    let p = random_symmetric(d, 1.0, rng);
    let a = gaussian_vector(n, rng);
    QuadraticCoupledBilevel::new(q, b, c, p, quartic, a, 2.0)
}

/// Random minimax quadratic with an indefinite `A` and `C` spectrum in `[1, 3]`.
pub fn random_minimax<R: Rng + ?Sized>(d: usize, n: usize, quartic: f64, rng: &mut R) -> Result<MinimaxQuadratic> {
    let a = random_symmetric(d, 2.0, rng);
    let b = gaussian_matrix(d, n, rng) / (n as f64).sqrt();
    let c = random_spd(n, 1.0, 3.0, rng);
    MinimaxQuadratic::new(a, b, c, quartic, 2.0)
}

pub(crate) fn is_symmetric(m: &Matrix) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = 1.0 + m.abs().max();
    (m - m.transpose()).abs().max() <= 1e-12 * scale
}

pub(crate) fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub(crate) fn sym_eigen_range(m: &Matrix) -> (f64, f64) {
    let e = m.clone().symmetric_eigen().eigenvalues;
    (e.min(), e.max())
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidConfig("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spectrum_is_planted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = with_spectrum(&[-1.0, 2.0, 3.5], &mut rng);
        let (lo, hi) = sym_eigen_range(&m);
        assert!((lo + 1.0).abs() < 1e-12);
        assert!((hi - 3.5).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_orthogonal(5, &mut rng);
        assert!((&v.transpose() * &v - Matrix::identity(5, 5)).abs().max() < 1e-12);
    }

    #[test]
    fn ground_truth_requires_exact_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_quadratic(2, 2, 2.0, 0.0, &mut rng).unwrap();
        let x = Vector::zeros(2);
        assert!(ground_truth(&p, &x).is_ok());
        assert!(matches!(
            ground_truth(&crate::problem::Blind(&p), &x),
            Err(Error::NoExactOracles)
        ));
    }
}
