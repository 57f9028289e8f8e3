use thiserror::Error;

/// Shape as `(rows, cols)`.
pub type Shape = (usize, usize);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NonScalarLoss(Shape),
    #[error("`{op}`: matrix is not positive definite (pivot {index} is {pivot})")]
    NotPositiveDefinite {
        op: &'static str,
        index: usize,
        pivot: f64,
    },
    #[error("`{op}`: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}
