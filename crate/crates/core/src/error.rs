use thiserror::Error;

/// Errors produced by the segmentation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("problem has {n_vars} variables, exhaustive search is limited to {limit}")]
    Capacity { n_vars: usize, limit: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("PNG decoding failed: {0}")]
    Png(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
