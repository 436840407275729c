use thiserror::Error;

/// Errors raised by the numerical kernels, distributions and filter.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank mismatch: expected rank {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("at t = {t}: {source}")]
    AtStep { t: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn not_pd(msg: impl Into<String>) -> Self {
        Error::NotPositiveDefinite(msg.into())
    }

    /// Attach the time index of the step that failed.
    pub fn at_step(self, t: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                t,
                source: Box::new(e),
            },
        }
    }

    /// Time index of the failing step, if the error came out of a sequential pass.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::AtStep { t, .. } => Some(*t),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
