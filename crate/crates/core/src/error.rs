use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension mismatch in `{operand}`: expected {expected}, found {found}")]
    Dimension {
        operand: String,
        expected: String,
        found: String,
    },

    /// Invalid configuration or argument (bad T, non-integral output size, topology mismatch).
    #[error("configuration error: {0}")]
    Config(String),

    /// Problem with the data itself (empty dataset, label out of range, count mismatch).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dimension(
        operand: impl Into<String>,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::Dimension {
            operand: operand.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
