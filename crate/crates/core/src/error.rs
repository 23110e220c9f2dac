use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient degrees of freedom: n = {n}, model rank = {rank}")]
    InsufficientDf { n: usize, rank: usize },

    #[error("beta calibration failed: {0}")]
    CalibrationFailed(String),

    /// A quantity that is provably well-behaved came out inconsistent.
    #[error("internal consistency violation: {0}")]
    Inconsistency(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by the numerics rather than by the caller.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Inconsistency(_))
    }
}
