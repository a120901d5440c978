use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The score is undefined because a covariance is singular (for instance `t = 0`).
    #[error("singular covariance: {0}")]
    Singular(String),

    /// Every component of a mixture evaluated to a non-finite log density.
    #[error("all mixture component densities underflow (log densities: {log_densities:?})")]
    DensityUnderflow { log_densities: Vec<f64> },

    #[error("non-finite sampler state at step {step} (t = {t}, norm = {norm})")]
    NonFinite { step: usize, t: f64, norm: f64 },

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("zero reference signal")]
    ZeroReference,

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

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
