use cgm_core::CoreError;
use cgm_data::DataError;
use cgm_meal::MealError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration keys or values; reported like a usage error.
    #[error("configuration: {0}")]
    Config(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("plausibility gate: {0}")]
    Gate(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(CoreError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Meal(#[from] MealError),
    #[error(transparent)]
    Numeric(#[from] cgm_numeric::NumericError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Plan { field, reason } => CliError::Invalid { field, reason },
            CoreError::Gate(reason) => CliError::Gate(reason),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn invalid(field: &str, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for usage and configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
