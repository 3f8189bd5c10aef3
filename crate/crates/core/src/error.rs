use std::path::PathBuf;

/// Errors raised by the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mass matrix is ill-conditioned (condition number {cond:.3e})")]
    IllConditionedMass { cond: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("matrix exponential produced non-finite entries")]
    NonFiniteResult,

    #[error("eigen-truncation unavailable: {0}")]
    TruncationUnavailable(String),

    #[error("finite-difference gradient unavailable in coordinate {0}")]
    GradientUnavailable(usize),

    #[error("all paths failed ({n_fail} failures)")]
    AllPathsFailed { n_fail: usize },

    #[error("paired datasets differ between variants: {0}")]
    DataMismatch(String),

    #[error("{}:{line}: {msg}", path.display())]
    Ingest {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
