use thiserror::Error;

/// Error type shared across the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed container: bad magic, unknown version, bad field encoding.
    #[error("{0}")]
    Format(String),
    /// Structurally valid container with a truncated or inconsistent payload.
    #[error("{0}")]
    Corruption(String),
    /// Input violates an operation precondition or a type invariant.
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    /// Non-finite values where finite ones are required.
    #[error("{0}")]
    Numeric(String),
    /// Inconsistent model or training configuration.
    #[error("{0}")]
    Config(String),
}

impl Error {
    /// Stable machine-parsable code; the CLI prints `code: message` on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Format(_) => "format_error",
            Error::Corruption(_) => "corruption_error",
            Error::Validation(_) => "validation_error",
            Error::Io(_) => "io_error",
            Error::Json(_) => "format_error",
            Error::Numeric(_) => "numeric_error",
            Error::Config(_) => "config_error",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
