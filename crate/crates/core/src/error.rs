use thiserror::Error;

/// Errors produced across the controller, learner, plant and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Euler-rate map is singular: pitch {pitch} rad is within 1e-3 of ±π/2")]
    GimbalLock { pitch: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("comparator normal equations are rank-deficient beyond the regularization floor")]
    SingularComparator,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical blowup: state norm {norm:e} exceeds limit")]
    NumericalBlowup { norm: f64 },

    #[error("run log is empty")]
    EmptyLog,

    #[error("runs are not comparable: {0}")]
    MismatchedRuns(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
