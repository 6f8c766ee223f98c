use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmoError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix {index} is not symmetric (max deviation {deviation:e})")]
    Asymmetric { index: usize, deviation: f64 },

    #[error("matrix {index} is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { index: usize, min_eigenvalue: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigenspectrum has no knee; supply an explicit rank")]
    NoKnee,

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("proximal step size underflow (step {step:e})")]
    StepUnderflow { step: f64 },

    #[error("objective diverged at outer iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<CmoError>,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CmoError {
    fn from(e: std::io::Error) -> Self {
        CmoError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CmoError>;
