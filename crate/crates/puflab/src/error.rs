//! Error type shared across the workbench.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Text-format parse failure. `line` is the 1-based physical line.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Binary/JSON decode failure with context.
    #[error("format error: {0}")]
    Format(String),

    /// Randomized construction exhausted its retry budget.
    #[error("generation failed: {0}")]
    Generation(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("training diverged (non-finite loss) at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("influence undefined: challenge bit {bit} is constant across the dataset")]
    UndefinedInfluence { bit: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
