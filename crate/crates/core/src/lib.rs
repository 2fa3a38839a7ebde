//! Saddle-point escape for nonconvex-strongly-convex bilevel and minimax problems.
//!
//! The crate bundles the hypergradient estimators (AID, GDmax, stocBiO), the
//! escape algorithms built on them (perturbed descent, iNEON, stocBiO with iNEON),
//! testbed problems with closed-form Φ, and classifiers for local optimality.
//!
//! ```
//! use bilevel_escape::prelude::*;
//!
//! let planted = make_planted_saddle(3, 2, -1.0, 0).unwrap();
//! let p = planted.problem();
//! let cfg = theory_params(p.constants(), planted.eps_target, 2.0, 0.1, ParamMode::Alg1).unwrap();
//! assert!(cfg.t_script >= 1);
//! ```

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod escape;
pub mod experiment;
pub mod hypergrad;
pub mod problem;
pub mod solvers;
pub mod testbed;

pub use error::{Error, Result};

/// Common imports.
pub mod prelude {
    pub use crate::diagnostics::{classify_point, escape_event, rate_fit, FitSpace, PointTag};
    pub use crate::error::{Error, Result};
    pub use crate::escape::{
        ineon, perturbed_descent, stocbio_ineon, theory_params, theory_params_with, AidOracle, Estimator, ExactOracle,
        HypergradOracle, ParamMode, ParamOptions, PerturbConfig, RunOptions, RunTrace, TerminalStatus,
    };
    pub use crate::hypergrad::{aid_estimate, gdmax_estimate, StocConfig, WarmStartState};
    pub use crate::problem::{BilevelProblem, DerivedConstants, ExactOracles, Matrix, SmoothnessConstants, Vector};
    pub use crate::testbed::{
        make_planted_saddle, make_quartic_ramp, FiniteSumBilevel, MinimaxQuadratic, PlantedSaddleProblem,
        QuadraticCoupledBilevel,
    };
}
