use thiserror::Error;

/// Errors produced by the factorization and solver routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands have incompatible dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Elementwise division hit a zero divisor.
    #[error("division by zero entry at ({row}, {col})")]
    DivisionByZero { row: usize, col: usize },

    /// A requested allocation or problem order exceeds the configured limit.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// An argument failed validation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative update produced a denominator too close to zero while the
    /// matching numerator was nonzero.
    #[error("degenerate denominator at index {index}{context}")]
    DegenerateDenominator { index: usize, context: String },

    /// A step computation found a descent direction with no finite step bound.
    #[error("unbounded descent direction")]
    UnboundedDescent,

    /// A non-finite value appeared during iteration.
    #[error("non-finite value encountered at iteration {iter}")]
    NonFinite { iter: usize },

    /// A quality metric is undefined for the given input.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
