use cgm_data::DataError;
use cgm_numeric::NumericError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("unknown level {level:?} for static variable {variable}")]
    UnknownLevel { variable: String, level: String },
    #[error("leakage guard: {0}")]
    Leakage(String),
    #[error("invalid plan: {field}: {reason}")]
    Plan { field: String, reason: String },
    #[error("plausibility gate: {0}")]
    Gate(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn config_err(msg: impl Into<String>) -> CoreError {
    CoreError::Config(msg.into())
}
