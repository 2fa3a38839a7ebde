use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{classify_point, PointTag};
use crate::error::{check_finite, Error, Result};
use crate::hypergrad::{aid_estimate, gdmax_estimate, HypergradEstimate, InnerResiduals, WarmStartState};
use crate::problem::{BilevelProblem, Vector};
use crate::solvers::sample_uniform_ball;

use super::{IterRecord, PerturbConfig, Phase, RunTrace, TerminalStatus};

/// Hypergradient estimator used by perturbed descent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Multi-step ascent on the inner maximization; minimax problems only.
    Gdmax,
    /// Inner GD plus CG on the implicit system.
    Aid,
    /// Closed-form ∇Φ; testbed controls only.
    Exact,
}

/// Run-level knobs that are not algorithm parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Label written into the trace.
    pub seed: u64,
    /// Store `x_k` every `snapshot_stride` iterations; 0 disables snapshots.
    pub snapshot_stride: usize,
    /// Stop as soon as the ground-truth classifier certifies an ε-local minimum.
    pub certify: bool,
}

/// Perturbed hypergradient descent.
///
/// Each iteration estimates ∇Φ(x_k) with warm-started inner solvers. If the
/// estimate is at most `4ε/5` and more than 𝒯 iterations have passed since the
/// last perturbation, `x_k ← x_k − η u` with `u` uniform in the ball of radius `r`.
/// Then `x_{k+1} = x_k − η ∇̂Φ`, with the estimate taken before the perturbation.
///
/// Numerical errors end the run with [`TerminalStatus::NumericalFailure`]; the
/// trace keeps every completed iteration. Configuration errors are returned.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_descent<P, R>(
    p: &P,
    x0: &Vector,
    y0: &Vector,
    v0: &Vector,
    cfg: &PerturbConfig,
    option: Estimator,
    k_max: usize,
    rng: &mut R,
    opts: &RunOptions,
) -> Result<RunTrace>
where
    P: BilevelProblem + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if k_max == 0 {
        return Err(Error::InvalidConfig("K must be ≥ 1".into()));
    }
    if option == Estimator::Gdmax && !p.is_minimax() {
        return Err(Error::NotMinimax);
    }
    if option == Estimator::Exact && p.exact().is_none() {
        return Err(Error::NoExactOracles);
    }
    for (v, want) in [(x0, p.dim_x()), (y0, p.dim_y()), (v0, p.dim_y())] {
        if v.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: v.len(),
            });
        }
    }
    let ex = p.exact();
    let mut trace = RunTrace::new(opts.seed, cfg.clone(), x0);
    let mut state = WarmStartState::new(y0.clone(), v0.clone());
    let mut x = x0.clone();
    let mut k_perturb = 0usize;

    for k in 0..k_max {
        if opts.certify && ex.is_some() {
            match classify_point(p, &x, cfg.epsilon, cfg.rho_phi_eff) {
                Ok(c) if c.tag == PointTag::ApproxLocalMin => {
                    trace.status = TerminalStatus::LocalMinCertified;
                    break;
                }
                Ok(_) => {}
                Err(e) => {
                    trace.status = TerminalStatus::NumericalFailure(e.to_string());
                    break;
                }
            }
        }
        let step = match option {
            Estimator::Gdmax => gdmax_estimate(p, &x, &state, cfg.tau, cfg.d_inner),
            Estimator::Aid => aid_estimate(p, &x, &state, cfg.tau, cfg.d_inner, cfg.n_cg),
            Estimator::Exact => exact_estimate(p, &x, &state),
        };
        let (est, next_state) = match step {
            Ok(s) => s,
            Err(e) => {
                trace.status = TerminalStatus::NumericalFailure(e.to_string());
                break;
            }
        };
        state = next_state;
        let grad = est.grad;
        let gnorm = grad.norm();
        let snapshot =
            (opts.snapshot_stride > 0 && k.is_multiple_of(opts.snapshot_stride)).then(|| x.iter().copied().collect());
        let phi = ex.map(|e| e.phi(&x));
        let est_err = ex.map(|e| (e.grad_phi(&x) - &grad).norm());

        let mut perturbed = false;
        if gnorm <= 0.8 * cfg.epsilon && k - k_perturb > cfg.t_script {
            let u = sample_uniform_ball(x.len(), cfg.r, rng);
            x.axpy(-cfg.eta, &u, 1.0);
            k_perturb = k;
            perturbed = true;
        }
        let (phi_base, step_err) = if perturbed {
            (ex.map(|e| e.phi(&x)), ex.map(|e| (e.grad_phi(&x) - &grad).norm()))
        } else {
            (phi, est_err)
        };

        let next = &x - &grad * cfg.eta;
        if let Err(e) = check_finite(&next, "perturbed_descent") {
            trace.status = TerminalStatus::NumericalFailure(e.to_string());
            break;
        }
        let phi_next = ex.map(|e| e.phi(&next));
        trace.records.push(IterRecord {
            k,
            phase: Phase::Descent,
            grad_est_norm: gnorm,
            phi,
            phi_base,
            phi_next,
            est_err,
            step_err,
            perturbed,
            k_perturb,
            x: snapshot,
        });
        x = next;
    }

    trace.final_x = x.iter().copied().collect();
    trace.final_phi = ex.map(|e| e.phi(&x));
    Ok(trace)
}

fn exact_estimate<P: BilevelProblem + ?Sized>(
    p: &P,
    x: &Vector,
    state: &WarmStartState,
) -> Result<(HypergradEstimate, WarmStartState)> {
    let ex = p.exact().ok_or(Error::NoExactOracles)?;
    let y = ex.y_star(x);
    let est = HypergradEstimate {
        grad: ex.grad_phi(x),
        y_inner: y,
        v_inner: None,
        residuals: InnerResiduals::default(),
    };
    Ok((est, state.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::escape::{theory_params, ParamMode};
    use crate::problem::ExactOracles;
    use crate::problem::Matrix;
    use crate::testbed::{make_planted_saddle, MinimaxQuadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_radius_at_exact_saddle_never_moves() {
        let ps = make_planted_saddle(3, 2, -1.0, 2).unwrap();
        let p = ps.problem();
        let mut cfg = theory_params(p.constants(), ps.eps_target, 2.0, 0.1, ParamMode::Alg1).unwrap();
        cfg.r = 0.0;
        let ws = WarmStartState::exact_at(p, &ps.x_saddle).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = perturbed_descent(
            p,
            &ps.x_saddle,
            &ws.y_prev,
            &ws.v_prev,
            &cfg,
            Estimator::Exact,
            200,
            &mut rng,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(t.final_x(), ps.x_saddle);
    }

    #[test]
    fn cadence_between_perturbations() {
        let ps = make_planted_saddle(2, 2, -1.0, 0).unwrap();
        let p = ps.problem();
        let cfg = theory_params(p.constants(), ps.eps_target, 2.0, 0.1, ParamMode::Alg1).unwrap();
        let ws = WarmStartState::exact_at(p, &ps.x_min).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = perturbed_descent(
            p,
            &ps.x_min,
            &ws.y_prev,
            &ws.v_prev,
            &cfg,
            Estimator::Aid,
            10 * cfg.t_script,
            &mut rng,
            &RunOptions::default(),
        )
        .unwrap();
        let ks = t.perturbation_iters();
        assert!(ks.len() >= 2);
        for w in ks.windows(2) {
            assert!(w[1] - w[0] > cfg.t_script);
        }
        assert!(ks[0] > cfg.t_script);
    }

    #[test]
    fn gdmax_needs_minimax() {
        let ps = make_planted_saddle(2, 2, -1.0, 0).unwrap();
        let p = ps.problem();
        let cfg = theory_params(p.constants(), 0.01, 2.0, 0.1, ParamMode::Alg1).unwrap();
        let z = Vector::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = perturbed_descent(
            p,
            &z,
            &z,
            &z,
            &cfg,
            Estimator::Gdmax,
            5,
            &mut rng,
            &RunOptions::default(),
        );
        assert!(matches!(r, Err(Error::NotMinimax)));
    }

    #[test]
    fn gdmax_decreases_phi_on_minimax() {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        let m = MinimaxQuadratic::new(s(1.0), s(0.5), s(2.0), 0.0, 2.0).unwrap();
        let cfg = theory_params(m.constants(), 1e-3, 2.0, 0.1, ParamMode::Alg1).unwrap();
        let x0 = Vector::from_element(1, 1.0);
        let z = Vector::zeros(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = perturbed_descent(
            &m,
            &x0,
            &z,
            &z,
            &cfg,
            Estimator::Gdmax,
            300,
            &mut rng,
            &RunOptions::default(),
        )
        .unwrap();
        assert!(t.final_phi.unwrap() < m.phi(&x0));
        assert!(m.grad_phi(&t.final_x()).norm() < 1e-2);
    }
}
