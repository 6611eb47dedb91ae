//! Shared error type for the inversion library.

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The CLI maps these onto its exit-code contract: `Domain`, `Dimension`,
/// `Parse`, and `Io` are configuration/input problems (exit 2), `Numeric`
/// is a numerical failure (exit 3), and `Optimization` means every
/// optimizer restart failed (exit 4).
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (non-positive length, empty grid, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector shapes do not conform.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numerical procedure failed (factorization, recurrence overflow, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A data file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Every optimizer restart failed.
    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
