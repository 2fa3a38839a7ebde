//! Saddle-escaping algorithms: perturbed descent, iNEON and stocBiO with iNEON.

mod ineon;
mod params;
mod perturbed;
mod stocbio;
mod trace;

pub use ineon::{ineon, AidOracle, ExactOracle, FnOracle, HypergradOracle, NeonResult, NEON_STOP_RATIO};
pub use params::{theory_params, theory_params_with, ParamMode, ParamOptions, PerturbConfig};
pub use perturbed::{perturbed_descent, Estimator, RunOptions};
pub use stocbio::stocbio_ineon;
pub use trace::{IterRecord, NeonEvent, Phase, RunTrace, TerminalStatus, CSV_HEADER};
