use thiserror::Error;

#[derive(Debug, Error)]
pub enum DumpyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] dumpy_core::CoreError),
}

pub type Result<T> = std::result::Result<T, DumpyError>;

impl DumpyError {
    pub fn format(msg: impl Into<String>) -> Self {
        DumpyError::Format(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        DumpyError::InvalidArgument(msg.into())
    }
}
