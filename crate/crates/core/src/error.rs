use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("truncation L_E = {requested} exceeds the tap span L = {span}")]
    InvalidTruncation { requested: usize, span: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("detector requires a trained CNN model but none was supplied")]
    MissingModel,

    #[error("model file, line {line}: {msg}")]
    ModelFormat { line: usize, msg: String },

    #[error("unsupported model format version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("model shape mismatch in {layer}: expected {expected}, found {found}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        found: String,
    },

    #[error("config, line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
