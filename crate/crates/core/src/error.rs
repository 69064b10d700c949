use std::path::PathBuf;

use cto_tensor::TensorError;

pub type Result<T, E = CtoError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CtoError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid model configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("{path}:{line}: {msg}")]
    ConfigParse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: byte {offset}: {msg}")]
    Format {
        path: String,
        offset: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl CtoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CtoError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CtoError::Usage(_) | CtoError::ConfigParse { .. } | CtoError::InvalidConfig(_) => 1,
            CtoError::Numeric(_) => 3,
            CtoError::Tensor(_)
            | CtoError::Format { .. }
            | CtoError::Data(_)
            | CtoError::Io { .. } => 2,
        }
    }
}
