use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or experiment received parameters outside their valid range.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Data handed to an operation violates its contract (bad label, wrong logit width, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// API misuse, e.g. writing a result cell twice.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            what,
            expected,
            actual,
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
