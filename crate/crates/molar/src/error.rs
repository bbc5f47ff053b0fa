//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MolarError {
    /// Tensor shapes do not line up for an operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration (bad hyperparameters, inconsistent dims, unknown keys).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input or output files (interaction logs, embedding files, checkpoints).
    #[error("format error: {0}")]
    Format(String),

    /// Training diverged or produced non-finite values.
    #[error("training error: {0}")]
    Training(String),

    /// Numeric precondition violated (zero-norm vector, empty batch, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset-level problems (missing items, users below the interaction floor).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MolarError>;

impl MolarError {
    /// Process exit code for the CLI: usage/config problems exit 2,
    /// everything else (runtime/training/data failures) exits 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            MolarError::Config(_) => 2,
            _ => 1,
        }
    }
}
