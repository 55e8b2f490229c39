use std::path::PathBuf;

use focal_nn::NnError;
use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] focal_core::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 numeric divergence, 4 I/O or corrupt data.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Core(e) if e.is_data_error() => 4,
            BenchError::Core(_) => 2,
            BenchError::Nn(NnError::Divergence { .. } | NnError::NonFinite { .. }) => 3,
            BenchError::Nn(NnError::Io(_) | NnError::Format(_)) => 4,
            BenchError::Nn(_) => 2,
            BenchError::Io { .. } => 4,
        }
    }
}
