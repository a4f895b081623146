//! Crate-wide error type with stable machine-readable codes.
//!
//! The CLI renders every failure as `ERROR <code>: <detail>`; `code()` is the
//! stable identifier, Display carries only the detail.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    /// Malformed tabular input: missing or unknown columns, unparseable
    /// cells, ragged rows. Cell-level messages name the file line.
    #[error("{0}")]
    Csv(String),
    /// A value outside the mathematical domain of the model (non-finite
    /// data, sigma <= 0, non-count Poisson observations, singular designs).
    #[error("{0}")]
    Domain(String),
    /// An operation called outside its stated preconditions (n too small,
    /// bandwidth out of range, parameter outside its box).
    #[error("{0}")]
    Precondition(String),
    /// The operation is undefined for the given inputs (derivatives of a
    /// finite family).
    #[error("{0}")]
    Unsupported(String),
    /// Invalid configuration: unknown method or family ids, inconsistent
    /// scenario files.
    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Domain(_) => "domain",
            Error::Precondition(_) => "precondition",
            Error::Unsupported(_) => "unsupported",
            Error::Config(_) => "config",
        }
    }

    pub fn csv(detail: impl Into<String>) -> Self {
        Error::Csv(detail.into())
    }

    pub fn domain(detail: impl Into<String>) -> Self {
        Error::Domain(detail.into())
    }

    pub fn precondition(detail: impl Into<String>) -> Self {
        Error::Precondition(detail.into())
    }

    pub fn unsupported(detail: impl Into<String>) -> Self {
        Error::Unsupported(detail.into())
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
