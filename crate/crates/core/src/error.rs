use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DestError>;

#[derive(Debug, Error)]
pub enum DestError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DestError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DestError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line contract:
    /// 1 runtime/numerical, 2 configuration, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            DestError::Config(_) | DestError::Dimension(_) => 2,
            DestError::Data(_) | DestError::Parse { .. } => 3,
            DestError::Invariant(_) | DestError::Numerical(_) | DestError::Io { .. } => 1,
        }
    }
}

pub(crate) fn shape_err(what: &str, a: &[usize], b: &[usize]) -> DestError {
    DestError::Dimension(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}
