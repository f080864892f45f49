use thiserror::Error;

/// Errors raised by the library.
///
/// Validation failures (`InvalidInput`, `Dimension`, `Constraint`) mean the
/// caller handed in something outside the operation's domain; `Numerical`
/// failures are raised mid-computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed bundle file: {0}")]
    Format(String),
}

impl Error {
    /// True for failures that happen during a computation rather than while
    /// validating inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
