use thiserror::Error;

#[derive(Debug, Error)]
pub enum MealError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no data: {0}")]
    Empty(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numeric(#[from] cgm_numeric::NumericError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MealError>;
