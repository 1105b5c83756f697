use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum McaError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("logarithm of non-positive value {value} at index {index}")]
    LogDomain { index: usize, value: f64 },

    #[error("index ({row}, {col}) out of range for {rows}x{cols} array")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("unknown {family} `{name}` (known: {known})")]
    UnknownName {
        family: &'static str,
        name: String,
        known: String,
    },

    #[error("{path}: parse error at byte offset {offset}: {msg}")]
    Parse { path: PathBuf, offset: u64, msg: String },

    #[error("dataset: {0}")]
    Data(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, McaError>;

pub(crate) fn check_finite(what: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(McaError::NonFinite { what, index }),
        None => Ok(()),
    }
}
