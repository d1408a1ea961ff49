//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by model construction, filtering, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("covariance not positive definite after regularization")]
    NonPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("transition kernel requires recent speed features but none were provided")]
    MissingFeatures,

    #[error("history of length {got} is shorter than k = {k}")]
    InsufficientHistory { k: usize, got: usize },

    #[error("history must contain at least two entries to fit transitions")]
    EmptyHistory,

    #[error("window length {window} must be shorter than the series ({len} points)")]
    WindowTooLong { window: usize, len: usize },

    #[error("all particle weights vanished at step {step} (observation y = {y}); \
             the measurement is a gross outlier under the configured model")]
    AllWeightsZero { step: usize, y: f64 },

    #[error("parameter learning requires conjugate priors: {0}")]
    NonConjugateConfig(String),

    #[error("file not found: {0}")]
    FileNotFound(String),

    #[error("header mismatch in {path}: missing column `{column}`")]
    HeaderMismatch { path: String, column: String },

    #[error("{0} contains no data rows")]
    EmptyFile(String),

    #[error("malformed config at line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
