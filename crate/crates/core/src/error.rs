use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite coordinate at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate {what}: {value:e}")]
    Degenerate { what: String, value: f64 },

    #[error("{what} did not converge (residual {residual:e})")]
    NonConvergence { what: String, residual: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("series diverges in {what}: measured term ratio {ratio:.4}")]
    Divergence { what: String, ratio: f64 },

    #[error("splitting misaligned: off-diagonal block norm {norm:e} exceeds {tol:e}")]
    MisalignedSplitting { norm: f64, tol: f64 },

    #[error("graph chart overflow: |P| = {norm:.4} >= 1, step too large")]
    ChartOverflow { norm: f64 },

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },

    #[error("invalid parameter '{key}': {msg}")]
    InvalidParam { key: String, msg: String },

    #[error("neumann solver: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn degenerate(what: impl Into<String>, value: f64) -> Self {
        Error::Degenerate {
            what: what.into(),
            value,
        }
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
