use thiserror::Error;

/// Errors raised by the depth pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{format} I/O error: {message}")]
    Io { format: &'static str, message: String },

    #[error("training error at sample {sample}: {message}")]
    Training { sample: usize, message: String },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(format: &'static str, msg: impl std::fmt::Display) -> Self {
        Error::Io {
            format,
            message: msg.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
