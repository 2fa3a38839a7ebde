use rand::Rng;

use crate::diagnostics::{classify_point, PointTag};
use crate::error::{check_finite, Error, Result};
use crate::hypergrad::{aid_estimate, stocbio_estimate, StocConfig, WarmStartState};
use crate::problem::{BilevelProblem, Vector};
use crate::solvers::{inner_sgd_batches, sample_rademacher};
use crate::testbed::{sample_batches, FiniteSumBilevel};

use super::{ineon, AidOracle, IterRecord, NeonEvent, PerturbConfig, Phase, RunOptions, RunTrace, TerminalStatus};

/// stocBiO with iNEON.
///
/// Each outer iteration runs warm-started SGD on the lower level, builds the
/// stocBiO estimate from fresh batches and steps `x ← x − β ∇̂Φ`. At the new point
/// it computes the AID hypergradient of the batch objective `Φ_𝒟` (upper batch
/// `𝒟_F`, lower batch `𝒟_G`, inner settings `τ, D, N` of `cfg`). If that is at
/// most `4ε/5`, iNEON runs on `Φ_𝒟`. A zero direction ends the run; otherwise
/// `x ← x − (ξ/80)√(ε/ρ_φ) u` with a Rademacher `ξ`.
///
/// A zero direction ends with [`TerminalStatus::LocalMinCertified`] when the
/// ground-truth classifier agrees and [`TerminalStatus::NeonReturnedZero`]
/// otherwise. `opts.certify` is ignored here.
#[allow(clippy::too_many_arguments)]
pub fn stocbio_ineon<R: Rng + ?Sized>(
    fs: &FiniteSumBilevel,
    x0: &Vector,
    y0: &Vector,
    cfg: &PerturbConfig,
    scfg: &StocConfig,
    k_max: usize,
    rng: &mut R,
    opts: &RunOptions,
) -> Result<RunTrace> {
    cfg.validate()?;
    scfg.validate()?;
    if k_max == 0 {
        return Err(Error::InvalidConfig("K must be ≥ 1".into()));
    }
    if x0.len() != fs.dim_x() || y0.len() != fs.dim_y() {
        return Err(Error::DimensionMismatch {
            expected: fs.dim_x() + fs.dim_y(),
            got: x0.len() + y0.len(),
        });
    }
    let ex = fs.exact();
    let mut trace = RunTrace::new(opts.seed, cfg.clone(), x0);
    let mut x = x0.clone();
    let mut y_prev = y0.clone();
    let mut k = 0usize;

    let snap = |k: usize, x: &Vector| {
        (opts.snapshot_stride > 0 && k.is_multiple_of(opts.snapshot_stride)).then(|| x.iter().copied().collect())
    };

    let outcome: Result<()> = (|| {
        while k < k_max {
            let plan = sample_batches(fs, scfg, rng)?;
            let y = inner_sgd_batches(fs, &x, &y_prev, scfg.alpha, &plan.s_batches)?;
            y_prev = y.clone();
            let est = stocbio_estimate(fs, &x, &y, &plan, scfg)?;
            let next = &x - &est.grad * scfg.beta;
            check_finite(&next, "stocbio_ineon")?;
            let phi = ex.map(|e| e.phi(&x));
            let est_err = ex.map(|e| (e.grad_phi(&x) - &est.grad).norm());
            trace.records.push(IterRecord {
                k,
                phase: Phase::Descent,
                grad_est_norm: est.grad.norm(),
                phi,
                phi_base: phi,
                phi_next: ex.map(|e| e.phi(&next)),
                est_err,
                step_err: est_err,
                perturbed: false,
                k_perturb: 0,
                x: snap(k, &x),
            });
            x = next;
            k += 1;

            let batch = fs.batch_problem(&plan.d_f, &plan.d_g)?;
            let start = WarmStartState::new(y_prev.clone(), Vector::zeros(fs.dim_y()));
            let (check, _) = aid_estimate(&batch, &x, &start, cfg.tau, cfg.d_inner, cfg.n_cg)?;
            if check.grad.norm() > 0.8 * cfg.epsilon {
                continue;
            }
            let mut oracle = AidOracle::from_config(&batch, y_prev.clone(), Vector::zeros(fs.dim_y()), cfg);
            let res = ineon(&mut oracle, &x, cfg, rng)?;
            let returned_zero = res.is_zero();
            trace.neon_events.push(NeonEvent {
                k,
                returned_zero,
                iterations: res.iterations,
            });
            if returned_zero {
                let certified = match ex {
                    Some(_) => classify_point(fs, &x, cfg.epsilon, cfg.rho_phi_eff)?.tag == PointTag::ApproxLocalMin,
                    None => false,
                };
                trace.status = if certified {
                    TerminalStatus::LocalMinCertified
                } else {
                    TerminalStatus::NeonReturnedZero
                };
                return Ok(());
            }
            if k >= k_max {
                break;
            }
            let xi = sample_rademacher(rng);
            let next = &x - &res.u * (xi * cfg.curvature_step());
            check_finite(&next, "stocbio_ineon")?;
            trace.records.push(IterRecord {
                k,
                phase: Phase::Curvature,
                grad_est_norm: check.grad.norm(),
                phi: ex.map(|e| e.phi(&x)),
                phi_base: ex.map(|e| e.phi(&x)),
                phi_next: ex.map(|e| e.phi(&next)),
                est_err: None,
                step_err: None,
                perturbed: true,
                k_perturb: k,
                x: snap(k, &x),
            });
            x = next;
            k += 1;
        }
        Ok(())
    })();

    if let Err(e) = outcome {
        match e {
            Error::InvalidConfig(_) | Error::DimensionMismatch { .. } => return Err(e),
            other => trace.status = TerminalStatus::NumericalFailure(other.to_string()),
        }
    }
    trace.final_x = x.iter().copied().collect();
    trace.final_phi = ex.map(|e| e.phi(&x));
    Ok(trace)
}
