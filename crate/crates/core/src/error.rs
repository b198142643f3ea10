use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto stable exit
/// codes: data/validation errors exit 3, numeric errors exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("model file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Exit code contract used by the CLI: 3 for data errors, 4 for
    /// numeric errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
