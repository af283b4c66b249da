use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("task index {index} out of range for {tasks} task(s)")]
    TaskOutOfRange { index: usize, tasks: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("cholesky factorization failed after jitter ladder {ladder:?}")]
    Cholesky { ladder: Vec<f64> },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate mixture component after {restarts} restart(s)")]
    DegenerateMixture { restarts: usize },

    #[error("initial hyperparameters are invalid: {0}")]
    Init(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
