//! Local-optimality classifiers, escape detection and rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::escape::{PerturbConfig, RunTrace};
use crate::problem::{reference_hypergradient, reference_phi_hessian, BilevelProblem, Matrix, Vector};
use crate::solvers::min_eigenvalue;

/// Relative margin for deciding the sign of an eigenvalue.
pub const EIG_MARGIN: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointTag {
    ApproxLocalMin,
    StrictSaddle,
    NonStationary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointClass {
    pub tag: PointTag,
    pub grad_norm: f64,
    pub lambda_min: f64,
    pub epsilon: f64,
    /// `−√(ρ_φ ε)`
    pub curvature_threshold: f64,
}

/// ε-local-minimum test: `‖∇Φ(x)‖ ≤ ε` and `λ_min(∇²Φ(x)) ≥ −√(ρ_φ ε)`.
///
/// Uses the closed forms when the problem has them, otherwise the dense references.
pub fn classify_point<P: BilevelProblem + ?Sized>(
    p: &P,
    x: &Vector,
    epsilon: f64,
    rho_phi_eff: f64,
) -> Result<PointClass> {
    let (grad, hess) = match p.exact() {
        Some(ex) => (ex.grad_phi(x), ex.hess_phi(x)),
        None => (
            reference_hypergradient(p, x, 1e-10)?,
            reference_phi_hessian(p, x, crate::problem::DEFAULT_FD_STEP)?,
        ),
    };
    classify_from_derivatives(&grad, &hess, epsilon, rho_phi_eff)
}

/// [`classify_point`] on precomputed derivatives.
pub fn classify_from_derivatives(grad: &Vector, hess: &Matrix, epsilon: f64, rho_phi_eff: f64) -> Result<PointClass> {
    let grad_norm = grad.norm();
    let tol = 1e-12 * (1.0 + hess.abs().max());
    let (lambda_min, _) = min_eigenvalue(hess, tol)?;
    let curvature_threshold = -(rho_phi_eff * epsilon).sqrt();
    let tag = if grad_norm > epsilon {
        PointTag::NonStationary
    } else if lambda_min >= curvature_threshold {
        PointTag::ApproxLocalMin
    } else {
        PointTag::StrictSaddle
    };
    Ok(PointClass {
        tag,
        grad_norm,
        lambda_min,
        epsilon,
        curvature_threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimaxClass {
    pub is_stationary: bool,
    pub yy_negdef: bool,
    pub xx_posdef: bool,
    pub schur_posdef: bool,
    pub strict_local_nash: bool,
    pub strict_local_minimax: bool,
}

/// Default stationarity tolerance `1e-8 (1 + ‖∇f‖_ref)`.
pub fn default_stationarity_tol(reference_grad_norm: f64) -> f64 {
    1e-8 * (1.0 + reference_grad_norm)
}

fn eig_range(h: &Matrix) -> (f64, f64, f64) {
    let e = h.clone().symmetric_eigen().eigenvalues;
    let margin = EIG_MARGIN * (1.0 + h.abs().max());
    (e.min(), e.max(), margin)
}

/// Strict local Nash and strict local minimax tests for `f(x, y)` of a minimax
/// problem posed with `g = −f`.
///
/// Nash: stationary, `∇²_yy f ≺ 0`, `∇²_xx f ≻ 0`. Minimax: stationary,
/// `∇²_yy f ≺ 0`, and `∇²_xx f − ∇²_xy f (∇²_yy f)⁻¹ ∇²_yx f ≻ 0`.
pub fn classify_minimax_point<P: BilevelProblem + ?Sized>(
    p: &P,
    x: &Vector,
    y: &Vector,
    stationarity_tol: f64,
) -> Result<MinimaxClass> {
    if !p.is_minimax() {
        return Err(Error::NotMinimax);
    }
    let so = p.second_order().ok_or(Error::NoExactOracles)?;
    let gx = p.grad_x_f(x, y);
    let gy = p.grad_y_f(x, y);
    let is_stationary = (gx.norm_squared() + gy.norm_squared()).sqrt() <= stationarity_tol;

    let hxx = so.hess_xx_f(x, y);
    let hxy = so.hess_xy_f(x, y);
    let hyy = so.hess_yy_f(x, y);
    let (ylo, yhi, ymargin) = eig_range(&hyy);
    if ylo.abs().min(yhi.abs()) <= ymargin && ylo <= ymargin && yhi >= -ymargin {
        return Err(Error::SingularSystem);
    }
    let yy_negdef = yhi < -ymargin;
    let (xlo, _, xmargin) = eig_range(&hxx);
    let xx_posdef = xlo > xmargin;

    let lu = hyy.clone().lu();
    let solved = lu.solve(&hxy.transpose()).ok_or(Error::SingularSystem)?;
    let schur = &hxx - &hxy * solved;
    let schur = (&schur + schur.transpose()) * 0.5;
    let (slo, _, smargin) = eig_range(&schur);
    let schur_posdef = slo > smargin;

    Ok(MinimaxClass {
        is_stationary,
        yy_negdef,
        xx_posdef,
        schur_posdef,
        strict_local_nash: is_stationary && yy_negdef && xx_posdef,
        strict_local_minimax: is_stationary && yy_negdef && schur_posdef,
    })
}

/// True when some perturbation at `k̃` is followed by
/// `Φ(x_{k̃+𝒯}) − Φ(x_{k̃}) ≤ −𝓕/2`.
///
/// `phi_series[k]` is Φ at iterate `k`; it may or may not include the final iterate.
pub fn escape_event(trace: &RunTrace, cfg: &PerturbConfig, phi_series: &[f64]) -> Result<bool> {
    let n = trace.records.len();
    if phi_series.len() != n && phi_series.len() != n + 1 {
        return Err(Error::MisalignedSeries {
            trace: n,
            series: phi_series.len(),
        });
    }
    Ok(escape_drops(trace, cfg, phi_series)
        .into_iter()
        .any(|drop| drop <= -cfg.f_script / 2.0))
}

/// `Φ(x_{k̃+𝒯}) − Φ(x_{k̃})` for every perturbation whose window fits in the series.
pub fn escape_drops(trace: &RunTrace, cfg: &PerturbConfig, phi_series: &[f64]) -> Vec<f64> {
    trace
        .perturbation_iters()
        .into_iter()
        .filter_map(|k| {
            let end = k + cfg.t_script;
            (end < phi_series.len()).then(|| phi_series[end] - phi_series[k])
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSpace {
    /// `log y` against `x`.
    Semilog,
    /// `log y` against `log x`.
    Loglog,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through the transformed points.
pub fn rate_fit(xs: &[f64], ys: &[f64], space: FitSpace) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateFit("xs and ys differ in length".into()));
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateFit(format!("need ≥ 3 points, got {}", xs.len())));
    }
    if ys.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::DegenerateFit("log-space fit needs positive ys".into()));
    }
    let tx: Vec<f64> = match space {
        FitSpace::Semilog => xs.to_vec(),
        FitSpace::Loglog => {
            if xs.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::DegenerateFit("log-log fit needs positive xs".into()));
            }
            xs.iter().map(|x| x.ln()).collect()
        }
    };
    let ty: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = tx.len() as f64;
    let mx = tx.iter().sum::<f64>() / n;
    let my = ty.iter().sum::<f64>() / n;
    let sxx: f64 = tx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * (1.0 + mx * mx) * n {
        return Err(Error::DegenerateFit("xs have zero variance".into()));
    }
    let sxy: f64 = tx.iter().zip(&ty).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ty.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}
