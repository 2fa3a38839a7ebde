use thiserror::Error;

/// Errors raised by oracles, solvers and the escape algorithms.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid smoothness constants: {0}")]
    InvalidConstants(String),

    #[error("iteration cap reached before tolerance (residual {residual:.3e})")]
    NonConvergence { residual: f64 },

    #[error("linear system is singular or not positive definite")]
    SingularSystem,

    #[error("conjugate gradient breakdown: operator not positive definite (pᵀHp = {curvature:.3e})")]
    NotPositiveDefinite { curvature: f64 },

    #[error("non-finite iterate encountered in {0}")]
    NumericalBlowup(&'static str),

    #[error("problem construction failed: {0}")]
    ConstructionFailed(String),

    #[error("iota must satisfy ι > 1 (got {0})")]
    InvalidIota(f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("misaligned series: trace has {trace} records, series has {series}")]
    MisalignedSeries { trace: usize, series: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dense reference solve refused: dimension {dim} exceeds cap {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("GDmax option requires a minimax problem (g = -f)")]
    NotMinimax,

    #[error("problem does not expose exact oracles")]
    NoExactOracles,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(v: &nalgebra::DVector<f64>, ctx: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBlowup(ctx))
    }
}
