use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("missing value at row {row}, column `{col}`")]
    MissingValue { row: usize, col: String },

    #[error("non-numeric value `{value}` at row {row}, column `{col}`")]
    NonNumeric { row: usize, col: String, value: String },

    #[error("unknown treatment level `{0}`")]
    UnknownTreatment(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{model} fit did not converge after {iterations} iterations (gradient sup-norm {grad_norm:.3e})")]
    NonConvergence {
        model: &'static str,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("{0}: matrix is singular or not positive definite")]
    Singular(&'static str),

    #[error("regime parse error: {0}")]
    Parse(String),

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical model fits (as opposed to bad input).
    pub fn is_fit_failure(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Singular(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
