//! Experiment configuration and the `run`, `verify-constants` and `sweep` commands.
//!
//! Configs are JSON with `"schema_version": 1`; unknown keys are rejected.
//! Every command is deterministic given the config: seeds drive ChaCha8 streams
//! and floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{classify_point, escape_drops, rate_fit, FitSpace, PointClass, RateFit};
use crate::error::{Error, Result};
use crate::escape::{
    ineon, perturbed_descent, stocbio_ineon, theory_params_with, AidOracle, Estimator, NeonEvent, ParamMode,
    ParamOptions, PerturbConfig, RunOptions, RunTrace, TerminalStatus,
};
use crate::hypergrad::{StocConfig, WarmStartState};
use crate::problem::{DerivedConstants, ExactOracles, SmoothnessConstants, Vector};
use crate::solvers::min_eigenvalue;
use crate::testbed::{ProblemSpec, TestProblem};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides `output_dir`.
pub const OUT_ENV: &str = "BILEVEL_ESCAPE_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    PerturbedGdmax,
    PerturbedAid,
    /// One iNEON call at the start point.
    IneonProbe,
    StocbioIneon,
}

impl Algorithm {
    fn mode(self) -> ParamMode {
        match self {
            Algorithm::PerturbedGdmax | Algorithm::PerturbedAid => ParamMode::Alg1,
            Algorithm::IneonProbe | Algorithm::StocbioIneon => ParamMode::Ineon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedStart {
    /// Planted saddle, ramp origin, or zero.
    Default,
    Saddle,
    Minimum,
    Origin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Named(NamedStart),
    Point(Vec<f64>),
}

impl Default for StartSpec {
    fn default() -> Self {
        StartSpec::Named(NamedStart::Default)
    }
}

/// Initial `y_0, v_0` of the inner solvers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// `y*(x_0)` and the exact solution of the implicit system.
    #[default]
    Exact,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    Kappa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
}

fn two() -> f64 {
    2.0
}
fn tenth() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}
fn rho_floor_default() -> f64 {
    crate::problem::DEFAULT_RHO_FLOOR
}
fn yes() -> bool {
    true
}
fn out_default() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    /// Path to a problem JSON, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_file: Option<PathBuf>,
    pub algorithm: Algorithm,
    /// Defaults to the planted target for planted and ramp problems.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "two")]
    pub iota: f64,
    #[serde(default = "tenth")]
    pub delta: f64,
    #[serde(default = "rho_floor_default")]
    pub rho_floor: f64,
    #[serde(default = "one")]
    pub c_order: f64,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "out_default")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub start: StartSpec,
    #[serde(default)]
    pub warm_start: WarmStart,
    /// Stop at the first certified ε-local minimum (testbed problems only).
    #[serde(default = "yes")]
    pub certify: bool,
    /// Overrides the theory radius `r`; `0` gives an unperturbed control.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Stochastic settings; theory sizes when absent.
    #[serde(default)]
    pub stoc: Option<StocConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check_shape()?;
        Ok(cfg)
    }

    /// Reads a config and inlines `problem_file`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        if let Some(rel) = cfg.problem_file.take() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.problem = Some(ProblemSpec::from_file(&base.join(rel))?);
        }
        Ok(cfg)
    }

    fn check_shape(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.problem.is_some() == self.problem_file.is_some() {
            return Err(Error::InvalidConfig(
                "give exactly one of problem and problem_file".into(),
            ));
        }
        if !(self.iota > 1.0) {
            return Err(Error::InvalidIota(self.iota));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig("delta must lie in (0, 1)".into()));
        }
        if !(self.rho_floor > 0.0) || !(self.c_order > 0.0) {
            return Err(Error::InvalidConfig("rho_floor and c_order must be positive".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidConfig("epsilon must be positive".into()));
            }
        }
        if let Some(r) = self.radius {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig("radius must be ≥ 0".into()));
            }
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn problem_spec(&self) -> Result<&ProblemSpec> {
        self.problem
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("problem_file was not resolved; use ExperimentConfig::load".into()))
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    fn param_options(&self) -> ParamOptions {
        ParamOptions {
            rho_floor: self.rho_floor,
            c_order: self.c_order,
        }
    }
}

/// Default accuracy of a problem: the planted target, the ramp ε, or none.
pub fn default_epsilon(tp: &TestProblem) -> Option<f64> {
    match tp {
        TestProblem::Planted(p) | TestProblem::FiniteSum(_, p) => Some(p.eps_target),
        TestProblem::Ramp(r) => Some(r.config.epsilon),
        _ => None,
    }
}

/// A built problem with its parameters and start point.
pub struct Prepared {
    pub problem: TestProblem,
    pub params: PerturbConfig,
    pub x0: Vector,
    pub y0: Vector,
    pub v0: Vector,
    pub stoc: Option<StocConfig>,
}

pub fn prepare(cfg: &ExperimentConfig, spec: &ProblemSpec, epsilon: Option<f64>) -> Result<Prepared> {
    let problem = spec.build()?;
    let p = problem.as_problem();
    let eps = epsilon
        .or(cfg.epsilon)
        .or_else(|| default_epsilon(&problem))
        .ok_or_else(|| Error::InvalidConfig("epsilon is required for this problem".into()))?;
    let mut params = theory_params_with(
        p.constants(),
        eps,
        cfg.iota,
        cfg.delta,
        cfg.algorithm.mode(),
        &cfg.param_options(),
    )?;
    if let Some(r) = cfg.radius {
        params.r = r;
    }

    let x0 = match &cfg.start {
        StartSpec::Point(v) => {
            if v.len() != p.dim_x() {
                return Err(Error::DimensionMismatch {
                    expected: p.dim_x(),
                    got: v.len(),
                });
            }
            Vector::from_column_slice(v)
        }
        StartSpec::Named(NamedStart::Default) => problem.default_start(),
        StartSpec::Named(NamedStart::Origin) => Vector::zeros(p.dim_x()),
        StartSpec::Named(NamedStart::Saddle) => problem
            .planted()
            .map(|ps| ps.x_saddle.clone())
            .ok_or_else(|| Error::InvalidConfig("start \"saddle\" needs a planted problem".into()))?,
        StartSpec::Named(NamedStart::Minimum) => problem
            .planted_minimum()
            .cloned()
            .ok_or_else(|| Error::InvalidConfig("start \"minimum\" needs a planted problem".into()))?,
    };
    let ws = match cfg.warm_start {
        WarmStart::Exact => WarmStartState::exact_at(p, &x0)?,
        WarmStart::Zero => WarmStartState::zeros(p),
    };

    let stoc = match cfg.algorithm {
        Algorithm::StocbioIneon => {
            if !matches!(problem, TestProblem::FiniteSum(..)) {
                return Err(Error::InvalidConfig("stocbio_ineon needs a finite_sum problem".into()));
            }
            let s = match &cfg.stoc {
                Some(s) => s.clone(),
                None => StocConfig::theory(
                    p.constants(),
                    &DerivedConstants::from_constants(p.constants()),
                    eps,
                    cfg.c_order,
                )?,
            };
            s.validate()?;
            Some(s)
        }
        _ => None,
    };
    if cfg.algorithm == Algorithm::PerturbedGdmax && !p.is_minimax() {
        return Err(Error::NotMinimax);
    }
    Ok(Prepared {
        problem,
        params,
        x0,
        y0: ws.y_prev,
        v0: ws.v_prev,
        stoc,
    })
}

/// Result of a single iNEON call.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub returned_zero: bool,
    pub iterations: usize,
    pub direction: Vec<f64>,
    /// `uᵀ∇²Φ(x_0)u` under the closed-form Hessian.
    pub rayleigh: Option<f64>,
    /// `−√(ρ_φ ε)/(40ι)`.
    pub curvature_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: TerminalStatus,
    pub iterations: usize,
    pub perturbations: Vec<usize>,
    /// `Φ(x_{k̃+𝒯}) − Φ(x_{k̃})` for each perturbation whose window completed.
    pub escape_drops: Vec<f64>,
    /// Number of drops at or below `−𝓕/2`.
    pub escape_events: usize,
    pub final_phi: Option<f64>,
    pub final_x: Vec<f64>,
    pub classification: Option<PointClass>,
    /// Distance from the final iterate to the nearest planted minimum.
    pub dist_to_min: Option<f64>,
    pub neon_events: Vec<NeonEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub params: PerturbConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stoc: Option<StocConfig>,
    pub seeds: Vec<SeedSummary>,
}

/// One seeded run: the trace and its summary.
pub fn run_seed(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> Result<(RunTrace, SeedSummary)> {
    let p = prep.problem.as_problem();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = RunOptions {
        seed,
        snapshot_stride: cfg.snapshot_stride,
        certify: cfg.certify,
    };
    let prm = &prep.params;
    let mut probe = None;
    let trace = match cfg.algorithm {
        Algorithm::PerturbedAid | Algorithm::PerturbedGdmax => {
            let est = if cfg.algorithm == Algorithm::PerturbedAid {
                Estimator::Aid
            } else {
                Estimator::Gdmax
            };
            perturbed_descent(p, &prep.x0, &prep.y0, &prep.v0, prm, est, cfg.k, &mut rng, &opts)?
        }
        Algorithm::StocbioIneon => {
            let TestProblem::FiniteSum(fs, _) = &prep.problem else {
                return Err(Error::InvalidConfig("stocbio_ineon needs a finite_sum problem".into()));
            };
            let scfg = prep.stoc.as_ref().expect("prepared with stochastic settings");
            stocbio_ineon(fs, &prep.x0, &prep.y0, prm, scfg, cfg.k, &mut rng, &opts)?
        }
        Algorithm::IneonProbe => {
            let mut t = RunTrace::new(seed, prm.clone(), &prep.x0);
            let mut oracle = AidOracle::from_config(p, prep.y0.clone(), prep.v0.clone(), prm);
            match ineon(&mut oracle, &prep.x0, prm, &mut rng) {
                Ok(res) => {
                    let zero = res.is_zero();
                    t.neon_events.push(NeonEvent {
                        k: 0,
                        returned_zero: zero,
                        iterations: res.iterations,
                    });
                    t.status = if zero {
                        TerminalStatus::NeonReturnedZero
                    } else {
                        TerminalStatus::MaxIters
                    };
                    probe = Some(ProbeSummary {
                        returned_zero: zero,
                        iterations: res.iterations,
                        direction: res.u.iter().copied().collect(),
                        rayleigh: p.exact().map(|e| res.u.dot(&(e.hess_phi(&prep.x0) * &res.u))),
                        curvature_bound: -(prm.rho_phi_eff * prm.epsilon).sqrt() / (40.0 * prm.iota),
                    });
                }
                Err(e @ (Error::InvalidConfig(_) | Error::InvalidIota(_))) => return Err(e),
                Err(e) => t.status = TerminalStatus::NumericalFailure(e.to_string()),
            }
            t.final_phi = p.exact().map(|e| e.phi(&prep.x0));
            t
        }
    };
    let drops = trace
        .phi_series()
        .map(|s| escape_drops(&trace, prm, &s))
        .unwrap_or_default();
    let xf = trace.final_x();
    let classification = match p.exact() {
        Some(_) if xf.iter().all(|t| t.is_finite()) => classify_point(p, &xf, prm.epsilon, prm.rho_phi_eff).ok(),
        _ => None,
    };
    let summary = SeedSummary {
        seed,
        status: trace.status.clone(),
        iterations: trace.records.len(),
        perturbations: trace.perturbation_iters(),
        escape_events: drops.iter().filter(|d| **d <= -prm.f_script / 2.0).count(),
        escape_drops: drops,
        final_phi: trace.final_phi,
        final_x: trace.final_x.clone(),
        classification,
        dist_to_min: match prep.problem.planted() {
            Some(ps) => Some(ps.dist_to_minima(&xf)),
            None => prep.problem.planted_minimum().map(|m| (&xf - m).norm()),
        },
        neon_events: trace.neon_events.clone(),
        probe,
    };
    Ok((trace, summary))
}

/// Runs every seed, spreading them over the available cores. Results keep seed order.
pub fn run_seeds(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<(RunTrace, SeedSummary)>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(cfg.seeds.len());
    let mut slots: Vec<Option<Result<(RunTrace, SeedSummary)>>> = (0..cfg.seeds.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in slots.chunks_mut(cfg.seeds.len().div_ceil(workers)).enumerate() {
            let start = w * cfg.seeds.len().div_ceil(workers);
            s.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_seed(cfg, prep, cfg.seeds[start + i]));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot is filled")).collect()
}

/// Outcome of [`run_experiment`].
pub struct RunReport {
    pub summary: RunSummary,
    pub traces: Vec<RunTrace>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn numerical_failure(&self) -> bool {
        self.summary
            .seeds
            .iter()
            .any(|s| matches!(s.status, TerminalStatus::NumericalFailure(_)))
    }
}

/// Runs all seeds and writes `trace_seed{seed}.csv` plus `summary.json` into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let prep = prepare(cfg, cfg.problem_spec()?, None)?;
    let results = run_seeds(cfg, &prep)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut traces = Vec::new();
    let mut seeds = Vec::new();
    for (trace, summary) in results {
        let path = out.join(format!("trace_seed{}.csv", trace.seed));
        trace.write_csv(std::io::BufWriter::new(fs::File::create(&path)?))?;
        files.push(path);
        traces.push(trace);
        seeds.push(summary);
    }
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        algorithm: cfg.algorithm,
        params: prep.params.clone(),
        stoc: prep.stoc.clone(),
        seeds,
    };
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    files.push(path);
    Ok(RunReport { summary, traces, files })
}

/// One row of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub epsilon: f64,
    /// Median over seeds; uncertified seeds count as `K`.
    pub median_iters: f64,
    pub seeds: usize,
    pub uncertified: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub fit: Option<RateFit>,
    pub warning: Option<String>,
}

pub const SWEEP_HEADER: &str = "value,epsilon,median_iters,seeds,uncertified";

impl SweepReport {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from(SWEEP_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{},{}",
                r.value, r.epsilon, r.median_iters, r.seeds, r.uncertified
            );
        }
        s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median iterations-to-certification per grid point and a log–log slope.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("sweep needs a \"sweep\" block".into()))?;
    if sw.grid.is_empty() || sw.grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig("sweep grid must hold positive values".into()));
    }
    if cfg.algorithm == Algorithm::IneonProbe {
        return Err(Error::InvalidConfig(
            "ineon_probe has no iteration count to sweep".into(),
        ));
    }
    let base = cfg.problem_spec()?;
    let mut run_cfg = cfg.clone();
    run_cfg.certify = true;
    let mut rows = Vec::new();
    for &value in &sw.grid {
        let (spec, eps) = match sw.axis {
            SweepAxis::Epsilon => (base.with_epsilon(value), Some(value)),
            SweepAxis::Kappa => (base.with_kappa(value)?, None),
        };
        let prep = prepare(&run_cfg, &spec, eps)?;
        let results = run_seeds(&run_cfg, &prep)?;
        let mut iters = Vec::new();
        let mut uncertified = 0;
        for (_, s) in &results {
            if s.status == TerminalStatus::LocalMinCertified {
                iters.push(s.iterations as f64);
            } else {
                uncertified += 1;
                iters.push(cfg.k as f64);
            }
        }
        rows.push(SweepRow {
            value,
            epsilon: prep.params.epsilon,
            median_iters: median(iters),
            seeds: results.len(),
            uncertified,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_iters).collect();
    let (fit, warning) = match rate_fit(&xs, &ys, FitSpace::Loglog) {
        Ok(f) => (Some(f), None),
        Err(e @ Error::DegenerateFit(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(SweepReport {
        axis: sw.axis,
        rows,
        fit,
        warning,
    })
}

/// Runs [`sweep`] and writes `sweep.csv` and `fit.json` into `out`.
pub fn sweep_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<SweepReport> {
    let report = sweep(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.csv"), report.to_csv_string())?;
    fs::write(out.join("fit.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Problem and accuracy for `verify-constants`: a full experiment config or a bare problem spec.
pub fn load_for_constants(path: &Path) -> Result<(ProblemSpec, Option<ExperimentConfig>)> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("kind").is_some() {
        return Ok((serde_json::from_value(value)?, None));
    }
    let cfg = ExperimentConfig::load(path)?;
    Ok((cfg.problem_spec()?.clone(), Some(cfg)))
}

fn push_row(out: &mut String, name: &str, v: f64) {
    let _ = writeln!(out, "{name:<28} {v:.16e}");
}

fn push_config(out: &mut String, title: &str, c: &PerturbConfig, dim: Option<usize>) {
    let _ = writeln!(out, "\n[{title}]");
    push_row(out, "eta", c.eta);
    push_row(out, "tau", c.tau);
    push_row(out, "r", c.r);
    let _ = writeln!(out, "{:<28} {}", "T", c.t_script);
    push_row(out, "F", c.f_script);
    push_row(out, "S", c.s_script);
    let _ = writeln!(out, "{:<28} {}", "D", c.d_inner);
    let _ = writeln!(out, "{:<28} {}", "N", c.n_cg);
    if let Some(d) = dim {
        // δ must exceed this for the escape guarantee at the chosen ι.
        push_row(out, "delta_condition_rhs", c.delta_condition(d));
    }
}

/// Table of constants and theory parameters.
pub fn constants_report(spec: &ProblemSpec, cfg: Option<&ExperimentConfig>) -> Result<String> {
    let built = match spec {
        ProblemSpec::Constants(_) => None,
        other => Some(other.build()?),
    };
    let c: SmoothnessConstants = match &built {
        Some(tp) => *tp.as_problem().constants(),
        None => spec.constants()?,
    };
    let dc = DerivedConstants::from_constants(&c);
    let eps = cfg
        .and_then(|c| c.epsilon)
        .or_else(|| built.as_ref().and_then(default_epsilon))
        .unwrap_or(1e-2);
    let iota = cfg.map_or(2.0, |c| c.iota);
    let delta = cfg.map_or(0.1, |c| c.delta);
    let opts = cfg.map_or_else(ParamOptions::default, |c| c.param_options());

    let mut out = String::new();
    let _ = writeln!(out, "[constants]");
    for (name, v) in [
        ("mu", c.mu()),
        ("ell", c.ell()),
        ("rho", c.rho()),
        ("nu", c.nu()),
        ("M", c.m_bound()),
        ("sigma2", c.sigma2()),
        ("kappa", dc.kappa),
        ("L_phi", dc.l_phi),
        ("rho_phi", dc.rho_phi),
        ("rho_phi_eff", dc.rho_phi_eff(opts.rho_floor)),
        ("epsilon", eps),
        ("iota", iota),
        ("delta", delta),
    ] {
        push_row(&mut out, name, v);
    }
    if dc.rho_phi == 0.0 {
        let _ = writeln!(
            out,
            "notice: rho_phi = 0, floored to rho_floor = {:.16e} for the curvature threshold",
            opts.rho_floor
        );
    }
    let alg1 = theory_params_with(&c, eps, iota, delta, ParamMode::Alg1, &opts)?;
    let neon = theory_params_with(&c, eps, iota, delta, ParamMode::Ineon, &opts)?;
    let dim = built.as_ref().map(|tp| tp.as_problem().dim_x());
    push_config(&mut out, "perturbed descent", &alg1, dim);
    push_config(&mut out, "ineon", &neon, dim);
    if let Some(ps) = built.as_ref().and_then(TestProblem::planted) {
        let h = ps.problem().hess_phi(&ps.x_saddle);
        let (lmin, _) = min_eigenvalue(&h, 1e-12)?;
        let _ = writeln!(out, "\n[planted saddle]");
        push_row(&mut out, "lambda_min_hess_phi", lmin);
        push_row(&mut out, "target", ps.neg_eig);
        push_row(&mut out, "eps_target", ps.eps_target);
    }
    Ok(out)
}

/// Exit code for an error: 2 for invalid input, 3 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. }
        | Error::SingularSystem
        | Error::NotPositiveDefinite { .. }
        | Error::NumericalBlowup(_) => 3,
        _ => 2,
    }
}

fn fail(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

pub fn cmd_run(config_path: &Path) -> i32 {
    let cfg = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let out = cfg.output_dir();
    match run_experiment(&cfg, &out) {
        Ok(report) => {
            for s in &report.summary.seeds {
                match &s.probe {
                    Some(pr) if pr.returned_zero => {
                        println!("seed {}: no negative curvature after {} steps", s.seed, pr.iterations)
                    }
                    Some(pr) => println!(
                        "seed {}: direction after {} steps, rayleigh {:?} (bound {:.6e})",
                        s.seed, pr.iterations, pr.rayleigh, pr.curvature_bound
                    ),
                    None => println!("seed {}: {:?} after {} iterations", s.seed, s.status, s.iterations),
                }
            }
            println!("wrote {} files to {}", report.files.len(), out.display());
            if report.numerical_failure() {
                eprintln!("error: at least one seed ended in a numerical failure");
                3
            } else {
                0
            }
        }
        Err(e) => fail(&e),
    }
}

pub fn cmd_verify_constants(config_path: &Path) -> i32 {
    let res = load_for_constants(config_path).and_then(|(spec, cfg)| constants_report(&spec, cfg.as_ref()));
    match res {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => fail(&e),
    }
}

pub fn cmd_sweep(config_path: &Path) -> i32 {
    let cfg = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let out = cfg.output_dir();
    match sweep_to_dir(&cfg, &out) {
        Ok(report) => {
            print!("{}", report.to_csv_string());
            match (&report.fit, &report.warning) {
                (Some(f), _) => println!("slope {:.16e} (r² {:.4})", f.slope, f.r_squared),
                (None, Some(w)) => eprintln!("warning: {w}"),
                (None, None) => {}
            }
            0
        }
        Err(e) => fail(&e),
    }
}
