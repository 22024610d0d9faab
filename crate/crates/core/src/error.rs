use thiserror::Error;

/// Errors raised by the testing library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("design is rank deficient (numerical rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("subset of size {size} too large for sample sizes ({n1}, {n2})")]
    SubsetTooLarge { size: usize, n1: usize, n2: usize },

    #[error("empty subset is not allowed unless explicitly enabled")]
    EmptySubset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("too few observations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("enumeration budget exceeded: {needed} entries > budget {budget}")]
    BudgetExceeded { needed: f64, budget: usize },

    #[error("no threshold for subset {0:?} in the calibration")]
    MissingThreshold(Vec<usize>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
