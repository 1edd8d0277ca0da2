use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot separate: point is an outer product")]
    CannotSeparate,

    #[error("point is feasible for the oracle set (distance 0)")]
    PointFeasible,

    #[error("degenerate basis (condition estimate {condition:e})")]
    DegenerateBasis { condition: f64 },

    #[error("apex is not strictly inside the set (margin {margin:e})")]
    ApexNotInterior { margin: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("missing bound on variable x{index} (tighten bounds or supply them explicitly)")]
    MissingBound { index: usize },

    #[error("LP {0}")]
    Lp(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
