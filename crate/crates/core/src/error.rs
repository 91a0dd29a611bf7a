use alloc::boxed::Box;
use alloc::string::String;

use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, HgmError>;

#[derive(Debug, Clone, Error)]
pub enum HgmError {
    #[error("column {0} has zero sample variance")]
    ConstantColumn(usize),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("data matrix needs at least 2 rows and 1 column, got {n}x{p}")]
    TooSmall { n: usize, p: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("linear system for the latent-signal update is singular")]
    SingularSystem,

    #[error("noise variance of group {0} is not strictly positive")]
    NonPositiveVariance(usize),

    #[error("group {0} is empty")]
    EmptyGroup(usize),

    #[error("label {label} at variable {index} is outside 0..{k}")]
    LabelOutOfRange { index: usize, label: usize, k: usize },

    #[error("requested {k} groups but only {p} variables")]
    KTooLarge { k: usize, p: usize },

    #[error("diagonal entry {0} of the Gram matrix is zero")]
    ZeroDiagonal(usize),

    /// The iteration cap was reached; `best` holds the last (best) iterate.
    #[error("iteration cap {iterations} reached with KKT residual {residual:e}")]
    MaxIterExceeded {
        iterations: usize,
        residual: f64,
        best: Box<DMatrix<f64>>,
    },

    #[error("block size {block_size} does not divide {k}, or rho {rho} is outside [0, 1)")]
    InvalidBlockStructure { k: usize, block_size: usize, rho: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("every restart failed; first error: {0}")]
    AllRestartsFailed(Box<HgmError>),
}
