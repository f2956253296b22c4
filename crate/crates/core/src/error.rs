use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A dataset or trace file could not be ingested. `row` is the 1-based
    /// data row (comment lines and the header are not counted).
    #[error("{message}, row {row}, column {column}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingest(row: usize, column: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ingest {
            row,
            column: column.into(),
            message: message.into(),
        }
    }
}
