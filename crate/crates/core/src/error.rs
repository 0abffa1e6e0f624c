use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample index {index} out of range for problem with n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("analytic constants unavailable for loss model {0}")]
    AnalyticUnavailable(&'static str),

    #[error("insufficient constants: missing {0}")]
    InsufficientConstants(&'static str),

    #[error("diverged at epoch {epoch}: loss {loss:e} exceeds threshold {threshold:e}")]
    Divergence {
        epoch: usize,
        loss: f64,
        threshold: f64,
    },

    #[error("dataset generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("enumeration budget exceeded: n = {n}, limit {limit}")]
    BudgetExceeded { n: usize, limit: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
