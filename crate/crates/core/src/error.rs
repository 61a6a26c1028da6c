use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset of {n} samples is too small to give every split at least one sample")]
    DatasetTooSmall { n: usize },

    #[error("machine parameter `{name}` (feature {index}) has zero variance on the training split")]
    ZeroVariance { index: usize, name: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("constant signal: no two classes to separate")]
    ConstantSignal,

    #[error("profile {profile} would be shifted by {shift} bins, which loses the whole signal (length {len})")]
    ShiftTooLarge { profile: usize, shift: i64, len: usize },

    #[error("no profile has any bin above its Otsu threshold")]
    NoSignal,

    #[error("loss config: {0}")]
    Loss(&'static str),

    #[error("backward called with a stale cache (cache from generation {cache}, model at {model})")]
    StaleCache { cache: u64, model: u64 },

    #[error("training diverged at step {step}: {what} is not finite")]
    Diverged { step: usize, what: &'static str },

    #[error("signed-rank test needs at least {needed} nonzero differences, got {got}")]
    Underpowered { needed: usize, got: usize },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
