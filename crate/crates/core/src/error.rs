use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Extents or channel counts do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller broke an operation precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input outside the mathematical domain of a metric (e.g. nonpositive depth).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} at byte {offset}: {message}")]
    Parse {
        file: PathBuf,
        offset: usize,
        message: String,
    },

    /// A checkpoint exists but cannot be used (wrong magic, incompatible model).
    #[error("load error: {0}")]
    Load(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<PathBuf>, offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            offset,
            message: message.into(),
        }
    }
}
