use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied arguments that violate a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A matrix that must be positive (semi)definite or full rank is not.
    #[error("singular or indefinite matrix: {0}")]
    Singular(String),

    /// A denominator in a variance formula vanished; the estimator is undefined.
    #[error("degenerate denominator: {0}")]
    Degenerate(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from bad input rather than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Dimension(_) | Error::Parse(_) | Error::Io(_)
        )
    }
}
