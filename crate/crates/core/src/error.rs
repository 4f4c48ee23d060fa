use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate geometry: normal matrix condition number {condition:.3e}")]
    Degenerate { condition: f64 },

    #[error("insufficient overlap: {found} correspondences, need at least {required}")]
    InsufficientOverlap { found: usize, required: usize },

    #[error("missing variable {0}")]
    MissingKey(String),

    #[error("variable {0} is not constrained by any factor")]
    Gauge(String),

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("episode generation failed at step {step}: {reason}")]
    EpisodeGeneration { step: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

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

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
