use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::problem::Vector;

use super::PerturbConfig;

/// Fixed CSV header of per-iteration traces.
pub const CSV_HEADER: &str = "k,phase,grad_est_norm,phi,perturbed,k_perturb,seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Hypergradient step.
    Descent,
    /// Rademacher step along an extracted negative-curvature direction.
    Curvature,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Descent => "descent",
            Phase::Curvature => "curvature",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum TerminalStatus {
    MaxIters,
    LocalMinCertified,
    NeonReturnedZero,
    /// Aborted on a numerical error; the trace holds everything before it.
    NumericalFailure(String),
}

/// One outer iteration.
///
/// `phi` is Φ at the iterate before any perturbation, `phi_base` at the point the
/// step starts from (after perturbation) and `phi_next` at the next iterate.
/// `est_err` compares the estimate with ∇Φ at the point it was computed at;
/// `step_err` compares it with ∇Φ at the base point. The Φ and error columns are
/// present only for problems with exact oracles.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub k: usize,
    pub phase: Phase,
    pub grad_est_norm: f64,
    pub phi: Option<f64>,
    pub phi_base: Option<f64>,
    pub phi_next: Option<f64>,
    pub est_err: Option<f64>,
    pub step_err: Option<f64>,
    pub perturbed: bool,
    pub k_perturb: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

/// One call of the negative-curvature routine.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeonEvent {
    pub k: usize,
    pub returned_zero: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunTrace {
    pub seed: u64,
    pub records: Vec<IterRecord>,
    pub status: TerminalStatus,
    pub final_x: Vec<f64>,
    pub final_phi: Option<f64>,
    pub neon_events: Vec<NeonEvent>,
    pub config: PerturbConfig,
}

impl RunTrace {
    pub fn new(seed: u64, config: PerturbConfig, x0: &Vector) -> Self {
        Self {
            seed,
            records: Vec::new(),
            status: TerminalStatus::MaxIters,
            final_x: x0.iter().copied().collect(),
            final_phi: None,
            neon_events: Vec::new(),
            config,
        }
    }

    /// Iterations at which a perturbation was applied.
    pub fn perturbation_iters(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.perturbed).map(|r| r.k).collect()
    }

    /// `Φ(x_0), …, Φ(x_K)`: pre-perturbation values followed by the final value.
    pub fn phi_series(&self) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.records.len() + 1);
        for r in &self.records {
            out.push(r.phi?);
        }
        out.push(self.final_phi?);
        Some(out)
    }

    pub fn final_x(&self) -> Vector {
        Vector::from_column_slice(&self.final_x)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            let phi = r.phi.map(|v| format!("{v:.16e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{},{:.16e},{},{},{},{}",
                r.k,
                r.phase.as_str(),
                r.grad_est_norm,
                phi,
                u8::from(r.perturbed),
                r.k_perturb,
                self.seed
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
