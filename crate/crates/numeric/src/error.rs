use thiserror::Error;

/// Errors raised by tensor construction, tape operations and archives.
#[derive(Debug, Error)]
pub enum NumericError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("{op}: domain error, {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumericError>;

pub(crate) fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NumericError {
    NumericError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> NumericError {
    NumericError::Invalid {
        op,
        detail: detail.into(),
    }
}
