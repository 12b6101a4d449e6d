//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode/encode error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("not found: {0}")]
    NotFound(String),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI maps this error to: 1 for user errors,
    /// 2 for internal/environment errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::MissingFile(_)
            | CoreError::DimensionMismatch(_)
            | CoreError::InvalidConfig(_)
            | CoreError::InvalidInput(_)
            | CoreError::NotFound(_) => 1,
            CoreError::Io { .. }
            | CoreError::Image { .. }
            | CoreError::Json { .. }
            | CoreError::Corrupt(_) => 2,
        }
    }
}
