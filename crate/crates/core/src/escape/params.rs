use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{DerivedConstants, SmoothnessConstants, DEFAULT_RHO_FLOOR};

/// Which parameter set to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    /// Perturbed descent.
    Alg1,
    /// Negative-curvature extraction: quartered window, larger decrease threshold.
    Ineon,
}

/// Tuned scalars of the escape algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub epsilon: f64,
    pub iota: f64,
    /// Failure probability. Recorded, not solved for.
    pub delta: f64,
    pub eta: f64,
    pub tau: f64,
    pub r: f64,
    pub t_script: usize,
    pub f_script: f64,
    pub s_script: f64,
    pub d_inner: usize,
    pub n_cg: usize,
    pub rho_phi_eff: f64,
    pub l_phi: f64,
    pub mode: ParamMode,
}

/// Knobs that are not part of the theory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamOptions {
    pub rho_floor: f64,
    /// Multiplier on the order-level depths `D` and `N`.
    pub c_order: f64,
}

impl Default for ParamOptions {
    fn default() -> Self {
        Self {
            rho_floor: DEFAULT_RHO_FLOOR,
            c_order: 1.0,
        }
    }
}

/// Theory-driven parameters with default options.
pub fn theory_params(
    c: &SmoothnessConstants,
    epsilon: f64,
    iota: f64,
    delta: f64,
    mode: ParamMode,
) -> Result<PerturbConfig> {
    theory_params_with(c, epsilon, iota, delta, mode, &ParamOptions::default())
}

/// `τ = 1/ℓ`, `η = 1/L_φ`, `r = ε/(400ι³)`, `𝒮 = √(ε/ρ_φ)/(4ι)`, and
///
/// - `Alg1`:  `𝒯 = ⌈L_φ ι/√(ρ_φ ε)⌉`,   `𝓕 = √(ε³/ρ_φ)/(100ι³)`
/// - `Ineon`: `𝒯 = ⌈L_φ ι/(4√(ρ_φ ε))⌉`, `𝓕 = √(ε³/ρ_φ)/(25ι³)`
///
/// with `D = ⌈c κ log(1/ε)⌉`, `N = ⌈c √κ log(1/ε)⌉` and ρ_φ floored.
pub fn theory_params_with(
    c: &SmoothnessConstants,
    epsilon: f64,
    iota: f64,
    delta: f64,
    mode: ParamMode,
    opts: &ParamOptions,
) -> Result<PerturbConfig> {
    if !(iota > 1.0) || !iota.is_finite() {
        return Err(Error::InvalidIota(iota));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(opts.rho_floor > 0.0) || !(opts.c_order > 0.0) {
        return Err(Error::InvalidConfig("rho_floor and c_order must be positive".into()));
    }
    let dc = DerivedConstants::from_constants(c);
    let rho = dc.rho_phi_eff(opts.rho_floor);
    let sqrt_re = (rho * epsilon).sqrt();
    let window = dc.l_phi / sqrt_re * iota;
    let root = (epsilon.powi(3) / rho).sqrt();
    let (t_script, f_script) = match mode {
        ParamMode::Alg1 => (window.ceil(), root / (100.0 * iota.powi(3))),
        ParamMode::Ineon => ((window / 4.0).ceil(), root / (25.0 * iota.powi(3))),
    };
    let log = (1.0 / epsilon).ln().max(0.0);
    let d_inner = (opts.c_order * dc.kappa * log).ceil().max(1.0) as usize;
    let n_cg = (opts.c_order * dc.kappa.sqrt() * log).ceil().max(1.0) as usize;
    Ok(PerturbConfig {
        epsilon,
        iota,
        delta,
        eta: 1.0 / dc.l_phi,
        tau: 1.0 / c.ell(),
        r: epsilon / (400.0 * iota.powi(3)),
        t_script: (t_script as usize).max(1),
        f_script,
        s_script: (epsilon / rho).sqrt() / (4.0 * iota),
        d_inner,
        n_cg,
        rho_phi_eff: rho,
        l_phi: dc.l_phi,
        mode,
    })
}

impl PerturbConfig {
    /// Right-hand side `(L_φ√d/√(ρ_φ ε)) ι² 2^{8−ι}` of the condition linking δ and ι
    /// (exponent `8 − ι/4` in `Ineon` mode). The guarantee needs `δ` above this.
    pub fn delta_condition(&self, dim: usize) -> f64 {
        let exponent = match self.mode {
            ParamMode::Alg1 => 8.0 - self.iota,
            ParamMode::Ineon => 8.0 - self.iota / 4.0,
        };
        self.l_phi * (dim as f64).sqrt() / (self.rho_phi_eff * self.epsilon).sqrt()
            * self.iota
            * self.iota
            * 2f64.powf(exponent)
    }

    /// Length of the curvature step `√(ε/ρ_φ)/80`.
    pub fn curvature_step(&self) -> f64 {
        (self.epsilon / self.rho_phi_eff).sqrt() / 80.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iota > 1.0) {
            return Err(Error::InvalidIota(self.iota));
        }
        let pos = [self.epsilon, self.eta, self.tau, self.rho_phi_eff];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(self.r >= 0.0) {
            return Err(Error::InvalidConfig("step sizes, ε and ρ_φ must be positive".into()));
        }
        if self.t_script == 0 || !(self.f_script > 0.0) {
            return Err(Error::InvalidConfig("𝒯 must be ≥ 1 and 𝓕 > 0".into()));
        }
        Ok(())
    }
}
