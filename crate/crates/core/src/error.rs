use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains no tokens")]
    EmptyInput,

    #[error("invalid template `{pattern}`: {reason}")]
    InvalidTemplate { pattern: String, reason: String },

    #[error("unknown intent `{0}`")]
    UnknownIntent(String),

    #[error("intent `{0}` has no template in the bootstrap partition")]
    IntentWithoutBootstrap(String),

    #[error("bootstrap fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("k = {k} is outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("variation `{variation}` is labeled `{found}` but the taught example is labeled `{expected}`")]
    LabelMismatch {
        variation: String,
        expected: String,
        found: String,
    },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),

    #[error("invalid replacement for `{word}`: {reason}")]
    InvalidReplacement { word: String, reason: String },

    #[error("session conflict ({event}): {reason}")]
    Conflict { event: &'static str, reason: String },

    #[error("the unlabeled pool is exhausted")]
    PoolExhausted,

    #[error("missing gold annotation for example `{0}`")]
    MissingGold(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
