use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HvanError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tensor(#[from] hvan_tensor::TensorError),
}

impl HvanError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HvanError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HvanError::Config(_) => 2,
            HvanError::Numeric(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = HvanError> = std::result::Result<T, E>;
