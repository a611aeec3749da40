use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid fold: {0}")]
    InvalidFold(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
