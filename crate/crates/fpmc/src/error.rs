//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum FpmcError {
    /// Invalid arguments, geometry mismatches, violated preconditions.
    #[error("validation error: {0}")]
    Validation(String),

    /// Non-finite values, diverged iterations, undefined results.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// File format problems and I/O failures.
    #[error("io error: {0}")]
    Io(String),
}

impl FpmcError {
    pub fn validation(msg: impl Into<String>) -> Self {
        FpmcError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        FpmcError::Numerical(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        FpmcError::Io(msg.into())
    }

    /// Process exit code for the CLI: 2 for validation/input errors, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            FpmcError::Validation(_) | FpmcError::Io(_) => 2,
            FpmcError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for FpmcError {
    fn from(e: std::io::Error) -> Self {
        FpmcError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for FpmcError {
    fn from(e: serde_json::Error) -> Self {
        FpmcError::Io(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, FpmcError>;
