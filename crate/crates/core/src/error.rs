use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}, column {column}: missing value")]
    MissingValue { line: usize, column: usize },

    #[error("invalid class label `{0}`")]
    InvalidLabel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Cholesky factorization failed even after the maximum diagonal jitter.
    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
}

impl Error {
    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Factorization(_) | Error::NonFinite(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
