use thiserror::Error;

/// Errors raised by the estimation, simulation and table machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "split at index {split} leaves fewer than {needed} observations on one side (T = {t})"
    )]
    InsufficientSplit {
        split: usize,
        needed: usize,
        t: usize,
    },

    #[error("too few observations: have {have}, need more than {need}")]
    TooFewObservations { have: usize, need: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("break grid is empty")]
    EmptyGrid,

    #[error(
        "design is singular or ill-conditioned at split {split} (condition number {condition:.3e})"
    )]
    SingularDesign { split: usize, condition: f64 },

    #[error("Wald middle matrix is not positive definite at split {split}")]
    SingularMidMatrix { split: usize },

    #[error("score covariance matrix is singular")]
    SingularXi,

    #[error("HLV estimate is not positive ({0:e})")]
    NonpositiveOmega(f64),

    #[error("covariance matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("direction vector must have unit length, got norm {0}")]
    NonUnitDirection(f64),

    #[error("bootstrap dropped {dropped} of {requested} replications")]
    BootstrapInvalid { dropped: usize, requested: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// True for failures that come from the numerics (singular fits and the like)
    /// rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign { .. }
                | Error::SingularMidMatrix { .. }
                | Error::SingularXi
                | Error::NonpositiveOmega(_)
                | Error::NotPsd(_)
                | Error::BootstrapInvalid { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
