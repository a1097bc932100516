use thiserror::Error;

/// Errors produced by the magging library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("singular system: condition estimate {condition:e} exceeds {limit:e}")]
    Singular { condition: f64, limit: f64 },

    #[error("group {group}: {source}")]
    Group {
        group: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("leave-one-out refit of sample {sample} in group {group}: {source}")]
    LeaveOut {
        group: usize,
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("solver did not converge after {iterations} iterations (gap {gap:e}, tolerance {tol:e})")]
    NoConvergence { iterations: usize, gap: f64, tol: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error (possibly wrapped in group or sample context)
    /// originates from a numerical solver rather than from the input.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NoConvergence { .. } | Error::NotPsd { .. } => true,
            Error::Group { source, .. } | Error::LeaveOut { source, .. } => {
                source.is_solver_failure()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
