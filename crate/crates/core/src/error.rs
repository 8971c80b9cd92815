use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: need {needed}, have {available}")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("empty query")]
    EmptyQuery,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite coordinate at point {0}")]
    NonFiniteCoordinate(usize),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("matrix is not symmetric (off-diagonal {0} vs {1})")]
    Asymmetric(f64, f64),

    #[error("covariance of component {index} is not positive semi-definite (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { index: usize, min_eigenvalue: f64 },

    #[error("expected a unit vector, norm is {0}")]
    NonUnitVector(f64),

    #[error("degenerate mean")]
    DegenerateMean,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at step {step}, batch item {item}: {reason}")]
    Diverged {
        step: usize,
        item: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
