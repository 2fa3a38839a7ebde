use nalgebra::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BilevelProblem, DerivedConstants, ExactOracles, Matrix, Vector};

use super::QuadraticCoupledBilevel;
use super::{gaussian_matrix, gaussian_vector, random_spd, sym_eigen_range, with_spectrum};

const MAX_ATTEMPTS: usize = 25;

/// Knobs of the planted-saddle construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    pub d: usize,
    pub n: usize,
    pub neg_eig: f64,
    pub seed: u64,
    /// Range of the remaining eigenvalues of ∇²Φ at the saddle.
    pub pos_eig: (f64, f64),
    pub quartic: f64,
    /// Spectrum range of the lower-level matrix Q.
    pub lower_spectrum: (f64, f64),
    pub coupling: f64,
    /// Typical norm of the saddle location.
    pub saddle_scale: f64,
    /// ε_target is chosen so that √(ρ_φ_eff ε_target) = |neg_eig| / gap.
    pub gap: f64,
    pub rho_floor: f64,
    /// Norm of `a = ∇_y f`.
    pub a_norm: f64,
    /// Box radius as a multiple of `max(‖x_min‖, ‖x_saddle‖)`.
    pub box_factor: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            d: 2,
            n: 2,
            neg_eig: -1.0,
            seed: 0,
            pos_eig: (0.5, 1.0),
            quartic: 1.0,
            lower_spectrum: (4.0, 5.0),
            coupling: 0.1,
            saddle_scale: 0.02,
            gap: 8.0,
            rho_floor: crate::problem::DEFAULT_RHO_FLOOR,
            a_norm: 0.2,
            box_factor: 1.1,
        }
    }
}

/// A quadratic-coupled problem with a stationary strict saddle of Φ at
/// `x_saddle` and a strict local minimum at `x_min`.
#[derive(Clone, Debug)]
pub struct PlantedSaddleProblem {
    problem: QuadraticCoupledBilevel,
    pub x_saddle: Vector,
    /// Deepest of [`minima`](Self::minima).
    pub x_min: Vector,
    /// Local minima reached by descending from the saddle along `±` the escape
    /// direction, deepest first. In this family a strict saddle has one on each side.
    pub minima: Vec<Vector>,
    pub eps_target: f64,
    pub neg_eig: f64,
    pub config: PlantedConfig,
}

impl PlantedSaddleProblem {
    pub fn problem(&self) -> &QuadraticCoupledBilevel {
        &self.problem
    }

    /// Distance from `x` to the nearest planted minimum.
    pub fn dist_to_minima(&self, x: &Vector) -> f64 {
        self.minima.iter().map(|m| (x - m).norm()).fold(f64::INFINITY, f64::min)
    }

    pub fn into_problem(self) -> QuadraticCoupledBilevel {
        self.problem
    }

    /// Unit eigenvector of ∇²Φ(x_saddle) for the negative eigenvalue.
    pub fn escape_direction(&self) -> Vector {
        let e = self.problem.hess_phi(&self.x_saddle).symmetric_eigen();
        let i = e.eigenvalues.imin();
        e.eigenvectors.column(i).into_owned()
    }
}

pub fn make_planted_saddle(d: usize, n: usize, neg_eig: f64, seed: u64) -> Result<PlantedSaddleProblem> {
    PlantedSaddleProblem::build(&PlantedConfig {
        d,
        n,
        neg_eig,
        seed,
        ..PlantedConfig::default()
    })
}

impl PlantedSaddleProblem {
    pub fn build(cfg: &PlantedConfig) -> Result<Self> {
        if cfg.d < 2 || cfg.n < 1 {
            return Err(Error::ConstructionFailed("planted saddle needs d ≥ 2, n ≥ 1".into()));
        }
        if !(cfg.neg_eig < 0.0) {
            return Err(Error::ConstructionFailed("neg_eig must be negative".into()));
        }
        if !(cfg.quartic > 0.0)
            || !(cfg.gap > 0.0)
            || !(cfg.pos_eig.0 > 0.0)
            || !(cfg.a_norm > 0.0)
            || !(cfg.box_factor >= 1.0)
        {
            return Err(Error::ConstructionFailed(
                "quartic, gap and positive eigenvalues must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut last = String::new();
        for _ in 0..MAX_ATTEMPTS {
            match attempt(cfg, &mut rng) {
                Ok(p) => return Ok(p),
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::ConstructionFailed(format!(
            "retries exhausted for seed {}: {last}",
            cfg.seed
        )))
    }
}

fn attempt(cfg: &PlantedConfig, rng: &mut ChaCha8Rng) -> Result<PlantedSaddleProblem> {
    let (d, n, qf) = (cfg.d, cfg.n, cfg.quartic);
    let q = random_spd(n, cfg.lower_spectrum.0, cfg.lower_spectrum.1, rng);
    let a = gaussian_vector(n, rng);
    let a = &a * (cfg.a_norm / a.norm());
    let z = Cholesky::new(q.clone()).ok_or(Error::SingularSystem)?.solve(&a);
    let x_s = gaussian_vector(d, rng) * (cfg.saddle_scale / (d as f64).sqrt());

    // The negative eigenvector is a coordinate axis, so the quartic bends Φ back up
    // at a distance that does not grow with d.
    let axis = rand::Rng::random_range(rng, 0..d);
    let eigs: Vec<f64> = (1..d)
        .map(|_| rand::Rng::random_range(rng, cfg.pos_eig.0..=cfg.pos_eig.1))
        .collect();
    let rest = with_spectrum(&eigs, rng);
    let others: Vec<usize> = (0..d).filter(|&i| i != axis).collect();
    let mut h_s = Matrix::zeros(d, d);
    h_s[(axis, axis)] = cfg.neg_eig;
    for (a_i, &i) in others.iter().enumerate() {
        for (b_i, &j) in others.iter().enumerate() {
            h_s[(i, j)] = rest[(a_i, b_i)];
        }
    }
    let mut p = h_s.clone();
    for i in 0..d {
        p[(i, i)] -= 12.0 * qf * x_s[i] * x_s[i];
    }
    let p = (&p + p.transpose()) * 0.5;

    // Coupling B (n × d) with Bᵀ Q⁻¹ a equal to the linear term that makes x_s stationary.
    let provisional = QuadraticCoupledBilevel::new(
        q.clone(),
        Matrix::zeros(n, d),
        Vector::zeros(n),
        p.clone(),
        qf,
        a.clone(),
        1.0,
    )?;
    let phi_lin = -provisional.upper_grad(&x_s);
    let zz = z.norm_squared();
    let proj = Matrix::identity(n, n) - &z * z.transpose() / zz;
    let b = &z * phi_lin.transpose() / zz + proj * gaussian_matrix(n, d, rng) * cfg.coupling;
    let c = gaussian_vector(n, rng) * cfg.coupling;

    let mut prob = QuadraticCoupledBilevel::new(q.clone(), b.clone(), c.clone(), p.clone(), qf, a.clone(), 1.0)?;
    prob.set_phi_lin(phi_lin.clone());

    let h = prob.hess_phi(&x_s);
    let (lmin, _) = sym_eigen_range(&h);
    if (lmin - cfg.neg_eig).abs() > 1e-8 * (1.0 + cfg.neg_eig.abs()) {
        return Err(Error::ConstructionFailed("planted spectrum drifted".into()));
    }
    let e = h.symmetric_eigen();
    let v = e.eigenvectors.column(e.eigenvalues.imin()).into_owned();

    let phi_s = prob.phi(&x_s);
    let step = 0.1 * cfg.saddle_scale.max(0.1);
    let mut minima: Vec<Vector> = Vec::new();
    for sign in [1.0, -1.0] {
        let start = &x_s + &v * (sign * step);
        if let Some(xm) = local_minimum(&prob, &start) {
            let fresh = minima.iter().all(|m| (m - &xm).norm() > 1e-8 * (1.0 + xm.norm()));
            if prob.phi(&xm) < phi_s && fresh {
                minima.push(xm);
            }
        }
    }
    if minima.is_empty() {
        return Err(Error::ConstructionFailed("no planted minimum found".into()));
    }
    minima.sort_by(|a, b| prob.phi(a).total_cmp(&prob.phi(b)));
    let x_min = minima[0].clone();

    // Both escape branches must stay inside the box the constants are taken over.
    let far = minima.iter().map(|m| m.norm()).fold(x_s.norm(), f64::max);
    let radius = cfg.box_factor * far;
    let mut prob = QuadraticCoupledBilevel::new(q, b, c, p, qf, a, radius)?;
    prob.set_phi_lin(phi_lin);
    if prob.grad_phi(&x_s).norm() > 1e-10 {
        return Err(Error::ConstructionFailed("saddle is not stationary".into()));
    }

    let dc = DerivedConstants::from_constants(prob.constants());
    let rho_eff = dc.rho_phi_eff(cfg.rho_floor);
    let eps_target = cfg.neg_eig * cfg.neg_eig / (cfg.gap * cfg.gap * rho_eff);
    Ok(PlantedSaddleProblem {
        problem: prob,
        x_saddle: x_s,
        x_min,
        minima,
        eps_target,
        neg_eig: cfg.neg_eig,
        config: cfg.clone(),
    })
}

/// Backtracking gradient descent followed by Newton polishing on the exact Φ.
/// Returns a point with ‖∇Φ‖ ≤ 1e-12 and positive-definite ∇²Φ, if found.
fn local_minimum(p: &QuadraticCoupledBilevel, start: &Vector) -> Option<Vector> {
    let mut x = start.clone();
    let mut step = 1.0;
    for _ in 0..200_000 {
        let g = p.grad_phi(&x);
        let gn2 = g.norm_squared();
        if gn2 < 1e-12 {
            break;
        }
        let f0 = p.phi(&x);
        loop {
            let cand = &x - &g * step;
            if p.phi(&cand) <= f0 - 0.5 * step * gn2 || step < 1e-14 {
                x = cand;
                break;
            }
            step *= 0.5;
        }
        step *= 2.0;
    }
    for _ in 0..50 {
        let g = p.grad_phi(&x);
        if g.norm() <= 1e-13 {
            break;
        }
        let chol = Cholesky::new(p.hess_phi(&x))?;
        x -= chol.solve(&g);
    }
    let (lmin, _) = sym_eigen_range(&p.hess_phi(&x));
    (p.grad_phi(&x).norm() <= 1e-12 && lmin > 1e-6 && x.iter().all(|t| t.is_finite())).then_some(x)
}

/// Knobs of the ε-scaled ramp family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RampConfig {
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Quartic coefficient is `q0 ε⁴`.
    pub q0: f64,
    /// Slope of the ramp in units of ε.
    pub slope: f64,
    pub lower_spectrum: (f64, f64),
    pub transverse: (f64, f64),
    pub coupling: f64,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            d: 2,
            n: 2,
            epsilon: 1e-2,
            seed: 0,
            q0: 1.0,
            slope: 2.0,
            lower_spectrum: (4.0, 5.0),
            transverse: (0.5, 1.0),
            coupling: 0.3,
        }
    }
}

/// Quartic ramp whose descent from the origin needs Θ(ε⁻²) gradient steps
/// before the gradient norm drops to ε.
///
/// Along `e₁`, Φ(x) = q₀ε⁴ x₁⁴ − slope·ε x₁, so the gradient stays between ε and
/// slope·ε over a stretch of length ∝ 1/ε. The other coordinates carry a
/// positive-definite quadratic.
#[derive(Clone, Debug)]
pub struct QuarticRamp {
    problem: QuadraticCoupledBilevel,
    pub x_start: Vector,
    pub x_min: Vector,
    pub config: RampConfig,
}

impl QuarticRamp {
    pub fn problem(&self) -> &QuadraticCoupledBilevel {
        &self.problem
    }
}

pub fn make_quartic_ramp(cfg: &RampConfig) -> Result<QuarticRamp> {
    let (d, n, eps) = (cfg.d, cfg.n, cfg.epsilon);
    if d < 1 || n < 1 || !(eps > 0.0) || !(cfg.q0 > 0.0) || !(cfg.slope > 1.0) {
        return Err(Error::ConstructionFailed(
            "ramp needs d, n ≥ 1, ε > 0, q0 > 0, slope > 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let qf = cfg.q0 * eps.powi(4);
    let q = random_spd(n, cfg.lower_spectrum.0, cfg.lower_spectrum.1, &mut rng);
    let a = gaussian_vector(n, &mut rng);
    let a = &a / a.norm();
    let z = Cholesky::new(q.clone()).ok_or(Error::SingularSystem)?.solve(&a);

    let mut p = Matrix::zeros(d, d);
    if d > 1 {
        let eigs: Vec<f64> = (1..d)
            .map(|_| rand::Rng::random_range(&mut rng, cfg.transverse.0..=cfg.transverse.1))
            .collect();
        p.view_mut((1, 1), (d - 1, d - 1))
            .copy_from(&with_spectrum(&eigs, &mut rng));
    }
    let mut phi_lin = Vector::zeros(d);
    phi_lin[0] = -cfg.slope * eps;
    let zz = z.norm_squared();
    let proj = Matrix::identity(n, n) - &z * z.transpose() / zz;
    let b = &z * phi_lin.transpose() / zz + proj * gaussian_matrix(n, d, &mut rng) * cfg.coupling;
    let c = gaussian_vector(n, &mut rng) * cfg.coupling;

    let s_min = (cfg.slope * eps / (4.0 * qf)).cbrt();
    let mut x_min = Vector::zeros(d);
    x_min[0] = s_min;
    let radius = 1.5 * s_min;
    let mut prob = QuadraticCoupledBilevel::new(q, b, c, p, qf, a, radius)?;
    prob.set_phi_lin(phi_lin);
    Ok(QuarticRamp {
        problem: prob,
        x_start: Vector::zeros(d),
        x_min,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_example_spectrum() {
        let p = make_planted_saddle(2, 2, -1.0, 0).unwrap();
        let (lmin, _) = sym_eigen_range(&p.problem().hess_phi(&p.x_saddle));
        assert!((lmin + 1.0).abs() < 1e-8);
        assert!(p.problem().grad_phi(&p.x_saddle).norm() <= 1e-10);
        assert!(p.problem().quartic() > 0.0);
    }

    #[test]
    fn planted_minimum_is_lower_for_many_seeds() {
        for seed in 0..100 {
            let p = make_planted_saddle(3, 2, -1.0, seed).unwrap();
            let prob = p.problem();
            assert!(prob.phi(&p.x_min) < prob.phi(&p.x_saddle), "seed {seed}");
            assert_eq!(prob.grad_phi(&p.x_saddle).norm(), 0.0, "seed {seed}");
            let (lmin, _) = sym_eigen_range(&prob.hess_phi(&p.x_min));
            assert!(lmin > 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(make_planted_saddle(1, 2, -1.0, 0).is_err());
        assert!(make_planted_saddle(2, 2, 0.5, 0).is_err());
    }

    #[test]
    fn ramp_minimum_is_stationary() {
        let r = make_quartic_ramp(&RampConfig::default()).unwrap();
        let g = r.problem().grad_phi(&r.x_min);
        assert!(g.norm() < 1e-12, "{g}");
        let g0 = r.problem().grad_phi(&r.x_start);
        assert!((g0.norm() - 2.0 * 1e-2).abs() < 1e-12);
    }
}
