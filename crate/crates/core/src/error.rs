//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Contract and
//! configuration violations map to CLI exit code 1, I/O failures to exit
//! code 2.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsanError {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration value or unknown config key.
    #[error("config error: {0}")]
    Config(String),

    /// An API precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed input data, located by line and 1-based column (field).
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Malformed container or checkpoint file.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl TsanError {
    pub fn shape(msg: impl Into<String>) -> Self {
        TsanError::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        TsanError::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        TsanError::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        TsanError::Format(msg.into())
    }

    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            TsanError::Io(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, TsanError>;
