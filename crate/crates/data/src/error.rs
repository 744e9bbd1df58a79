use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("channel {channel} of participant {participant} has no observations")]
    AllMissing { participant: String, channel: String },
    #[error("series has no observations")]
    EmptySeries,
    #[error("{path}: line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("leakage guard: {0}")]
    Leakage(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
