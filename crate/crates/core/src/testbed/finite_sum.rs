use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hypergrad::StocConfig;
use crate::problem::{BilevelProblem, ExactOracles, Matrix, SecondOrderOracles, SmoothnessConstants, Vector};

use super::QuadraticCoupledBilevel;
use super::{gaussian_matrix, gaussian_vector, random_symmetric, spectral_norm};

/// Upper bound on the total number of indices in one [`BatchPlan`].
pub const MAX_PLAN_INDICES: usize = 50_000_000;

/// Finite-sum bilevel problem built from zero-sum perturbations of a base
/// quadratic-coupled problem.
///
/// Component `i` replaces `(Q, B, c, a)` by `(Q + ΔQ_i, B + ΔB_i, c + Δc_i, a + Δa_i)`.
/// The perturbations sum to zero, so the uniform average of the components is
/// the base problem. `P` and the quartic term are shared.
#[derive(Clone, Debug)]
pub struct FiniteSumBilevel {
    base: QuadraticCoupledBilevel,
    dq: Vec<Matrix>,
    db: Vec<Matrix>,
    dc: Vec<Vector>,
    da: Vec<Vector>,
    constants: SmoothnessConstants,
}

/// Averaged component data over a batch.
#[derive(Clone, Debug)]
pub struct BatchMean {
    pub q: Matrix,
    pub b: Matrix,
    pub c: Vector,
    pub a: Vector,
}

impl FiniteSumBilevel {
    /// `noise ∈ [0, 1]` scales the perturbations; at 1 the largest ‖ΔQ_i‖ is μ/2,
    /// which keeps every component Hessian within `[μ/2, ℓ + μ/2]`.
    pub fn new(base: QuadraticCoupledBilevel, num_components: usize, noise: f64, seed: u64) -> Result<Self> {
        if num_components == 0 {
            return Err(Error::ConstructionFailed("need at least one component".into()));
        }
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::ConstructionFailed("noise must lie in [0, 1]".into()));
        }
        let (d, n, m) = (base.dim_x(), base.dim_y(), num_components);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dq: Vec<Matrix> = (0..m).map(|_| random_symmetric(n, 1.0, &mut rng)).collect();
        let mut db: Vec<Matrix> = (0..m).map(|_| gaussian_matrix(n, d, &mut rng)).collect();
        let mut dc: Vec<Vector> = (0..m).map(|_| gaussian_vector(n, &mut rng)).collect();
        let mut da: Vec<Vector> = (0..m).map(|_| gaussian_vector(n, &mut rng)).collect();
        center(&mut dq);
        center(&mut db);
        center(&mut dc);
        center(&mut da);

        let mu = base.constants().mu();
        rescale(&mut dq, noise * 0.5 * mu, spectral_norm);
        rescale(&mut db, noise * 0.5 * spectral_norm(base.b()).max(1.0), spectral_norm);
        rescale(&mut dc, noise * 0.5 * base.c().norm().max(1.0), |v| v.norm());
        rescale(&mut da, noise * 0.5 * base.a().norm().max(1.0), |v| v.norm());

        let bc = base.constants();
        let max_dq = dq.iter().map(spectral_norm).fold(0.0, f64::max);
        let max_db = db.iter().map(spectral_norm).fold(0.0, f64::max);
        let max_a = da.iter().map(|v| (base.a() + v).norm()).fold(0.0, f64::max);
        let r = base.box_radius();
        let mu_c = mu - max_dq;
        let ell_c = (bc.ell() + max_dq + max_db).max(mu_c);
        let p_norm = spectral_norm(base.p_upper());
        let gx = 4.0 * base.quartic() * r.powi(3) + p_norm * r;
        let m_c = (gx * gx + max_a * max_a).sqrt();
        // ‖y‖ is bounded by the lower-level solutions over the box.
        let ry = (spectral_norm(base.b()) * r + base.c().norm()) / mu;
        let sigma2 = (0..m)
            .map(|i| {
                let s = spectral_norm(&dq[i]) * ry + spectral_norm(&db[i]) * r + dc[i].norm();
                s * s
            })
            .sum::<f64>()
            / m as f64;
        let constants = SmoothnessConstants::new(mu_c, ell_c, bc.rho(), bc.nu(), m_c, sigma2)?;
        Ok(Self {
            base,
            dq,
            db,
            dc,
            da,
            constants,
        })
    }

    pub fn num_components(&self) -> usize {
        self.dq.len()
    }

    pub fn base(&self) -> &QuadraticCoupledBilevel {
        &self.base
    }

    /// Averages the component data with multiplicities given by `idx`.
    pub fn mean_over(&self, idx: &[usize]) -> BatchMean {
        let mut q = self.base.q().clone();
        let mut b = self.base.b().clone();
        let mut c = self.base.c().clone();
        let mut a = self.base.a().clone();
        if idx.is_empty() {
            return BatchMean { q, b, c, a };
        }
        let mut counts = vec![0usize; self.num_components()];
        for &i in idx {
            counts[i] += 1;
        }
        let total = idx.len() as f64;
        for (i, &k) in counts.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let w = k as f64 / total;
            q += &self.dq[i] * w;
            b += &self.db[i] * w;
            c += &self.dc[i] * w;
            a += &self.da[i] * w;
        }
        q = (&q + q.transpose()) * 0.5;
        BatchMean { q, b, c, a }
    }

    /// The deterministic problem `(f_{𝒟_F}, g_{𝒟_G})` defined by two batches.
    pub fn batch_problem(&self, d_f: &[usize], d_g: &[usize]) -> Result<QuadraticCoupledBilevel> {
        let mf = self.mean_over(d_f);
        let mg = self.mean_over(d_g);
        QuadraticCoupledBilevel::with_constants(
            mg.q,
            mg.b,
            mg.c,
            self.base.p_upper().clone(),
            self.base.quartic(),
            mf.a,
            self.base.box_radius(),
            self.constants,
        )
    }

    /// A single component as a deterministic problem.
    pub fn component(&self, i: usize) -> Result<QuadraticCoupledBilevel> {
        self.batch_problem(&[i], &[i])
    }

    /// `∇_y G(x, y; 𝒮)`.
    pub fn grad_y_g_batch(&self, x: &Vector, y: &Vector, idx: &[usize]) -> Vector {
        let m = self.mean_over(idx);
        &m.q * y - &m.b * x - &m.c
    }
}

fn center<T>(items: &mut [T])
where
    T: Clone + std::ops::AddAssign<T> + std::ops::SubAssign<T> + std::ops::Mul<f64, Output = T>,
{
    let m = items.len() as f64;
    let mut mean = items[0].clone() * 0.0;
    for it in items.iter() {
        mean += it.clone();
    }
    let mean = mean * (1.0 / m);
    for it in items.iter_mut() {
        *it -= mean.clone();
    }
}

fn rescale<T, F>(items: &mut [T], target: f64, norm: F)
where
    T: Clone + std::ops::Mul<f64, Output = T>,
    F: Fn(&T) -> f64,
{
    let largest = items.iter().map(&norm).fold(0.0, f64::max);
    let s = if largest > 0.0 { target / largest } else { 0.0 };
    for it in items.iter_mut() {
        *it = it.clone() * s;
    }
}

impl BilevelProblem for FiniteSumBilevel {
    fn dim_x(&self) -> usize {
        self.base.dim_x()
    }
    fn dim_y(&self) -> usize {
        self.base.dim_y()
    }
    fn f(&self, x: &Vector, y: &Vector) -> f64 {
        self.base.f(x, y)
    }
    fn g(&self, x: &Vector, y: &Vector) -> f64 {
        self.base.g(x, y)
    }
    fn grad_x_f(&self, x: &Vector, y: &Vector) -> Vector {
        self.base.grad_x_f(x, y)
    }
    fn grad_y_f(&self, x: &Vector, y: &Vector) -> Vector {
        self.base.grad_y_f(x, y)
    }
    fn grad_y_g(&self, x: &Vector, y: &Vector) -> Vector {
        self.base.grad_y_g(x, y)
    }
    fn hvp_yy_g(&self, x: &Vector, y: &Vector, v: &Vector) -> Vector {
        self.base.hvp_yy_g(x, y, v)
    }
    fn jvp_xy_g(&self, x: &Vector, y: &Vector, v: &Vector) -> Vector {
        self.base.jvp_xy_g(x, y, v)
    }
    /// Constants valid for every component.
    fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }
    fn exact(&self) -> Option<&dyn ExactOracles> {
        Some(&self.base)
    }
    fn second_order(&self) -> Option<&dyn SecondOrderOracles> {
        Some(&self.base)
    }
}

/// Index sets for one outer iteration of the stochastic algorithm.
///
/// `d_h[j - 1]` is the Neumann batch `ℬ_j`; `s_batches[t]` is the SGD batch `𝒮_t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub d_f: Vec<usize>,
    pub d_g: Vec<usize>,
    pub d_h: Vec<Vec<usize>>,
    pub s_batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    /// Scheduled sizes `|ℬ_1|, …, |ℬ_Q|` where `|ℬ_{Q+1−j}| = ⌈B Q (1 − ημ)^{j−1}⌉`.
    pub fn neumann_sizes(cfg: &StocConfig, mu: f64) -> Vec<usize> {
        let q = cfg.q_neumann;
        let mut sizes = vec![0usize; q];
        let contraction = 1.0 - cfg.eta_neumann * mu;
        for j in 1..=q {
            let raw = cfg.b_batch as f64 * q as f64 * contraction.powi(j as i32 - 1);
            // Guards against 6.000000000001 rounding up to 7.
            let size = (raw * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            sizes[q - j] = size;
        }
        sizes
    }

    pub fn total_indices(cfg: &StocConfig, mu: f64) -> usize {
        cfg.d_f + cfg.d_g + cfg.d_inner * cfg.s_batch + Self::neumann_sizes(cfg, mu).iter().sum::<usize>()
    }
}

/// Draws every batch of one outer iteration with replacement.
pub fn sample_batches<R: Rng + ?Sized>(fs: &FiniteSumBilevel, cfg: &StocConfig, rng: &mut R) -> Result<BatchPlan> {
    cfg.validate()?;
    let mu = fs.constants().mu();
    let total = BatchPlan::total_indices(cfg, mu);
    if total > MAX_PLAN_INDICES {
        return Err(Error::InvalidConfig(format!(
            "batch plan needs {total} indices, cap is {MAX_PLAN_INDICES}"
        )));
    }
    let m = fs.num_components();
    let mut draw = |k: usize| -> Vec<usize> { (0..k).map(|_| rng.random_range(0..m)).collect() };
    let s_batches = (0..cfg.d_inner).map(|_| draw(cfg.s_batch)).collect();
    let d_f = draw(cfg.d_f);
    let d_g = draw(cfg.d_g);
    let d_h = BatchPlan::neumann_sizes(cfg, mu).into_iter().map(&mut draw).collect();
    Ok(BatchPlan {
        d_f,
        d_g,
        d_h,
        s_batches,
    })
}
