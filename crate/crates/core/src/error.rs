use thiserror::Error;

pub type Result<T> = std::result::Result<T, DflError>;

#[derive(Debug, Error)]
pub enum DflError {
    /// A parameter or configuration value violates a precondition.
    #[error("configuration error: {0}")]
    Config(String),
    /// Tensor or architecture shapes do not agree.
    #[error("shape error: {0}")]
    Shape(String),
    /// The data itself is inconsistent (bad label, too few samples, ...).
    #[error("data error: {0}")]
    Data(String),
    /// A file does not follow its binary format.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A randomized generator ran out of retries.
    #[error("generation error: {0}")]
    Generation(String),
}

impl DflError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DflError::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DflError::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        DflError::Data(msg.into())
    }
}
