use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("mesh refinement failed: {0}")]
    RefinementFailure(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix not positive definite: pivot for index {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error(
        "precision assembly failed: {message} (smallest eigenvalue estimate {min_eigenvalue:e})"
    )]
    Assembly {
        message: String,
        min_eigenvalue: f64,
    },

    #[error("no convergence after {iterations} iterations: {trace}")]
    Convergence { iterations: usize, trace: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Assembly { .. }
                | Error::Convergence { .. }
                | Error::Numerical(_)
                | Error::RefinementFailure(_)
        )
    }
}
