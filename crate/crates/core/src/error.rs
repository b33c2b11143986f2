use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported polynomial degree {0} (expected 1 or 2)")]
    UnsupportedDegree(usize),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("mesh violates the right-angle hypothesis at element {0}")]
    NotRightAngled(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("{method} did not converge in {iterations} iterations (last measure {last:.3e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("time step {step} failed: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("expression error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
