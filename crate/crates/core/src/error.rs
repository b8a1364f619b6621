use crate::admm::AdmmTrace;
use crate::nested::AttributionPair;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular {what} system: {deficient} of {dim} directions are undetermined")]
    Singular {
        what: &'static str,
        dim: usize,
        deficient: usize,
    },

    #[error("all-zero mask at row {row}: sample weight is undefined")]
    SingularWeight { row: usize },

    #[error("oracle failed on row {row}: {source}")]
    Oracle {
        row: usize,
        #[source]
        source: crate::perturbation::OracleError,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("ADMM did not converge within {} iterations", .0.trace.len())]
    NonConvergence(Box<NonConvergence>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Final iterate and trace of an ADMM run that hit its iteration cap.
#[derive(Debug, Clone)]
pub struct NonConvergence {
    pub pair: AttributionPair,
    pub trace: AdmmTrace,
}
