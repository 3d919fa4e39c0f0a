use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: division by exact zero at element {index}")]
    DivisionByZero { op: &'static str, index: usize },
    #[error("{op}: argument {value} outside the domain at element {index}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{op}: axis {axis} invalid for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("backward requires a rank-0 tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("cholesky failed at pivot {pivot} (value {value:e}); max diagonal {max_diag:e}, condition estimate {condition:e}")]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        max_diag: f64,
        condition: f64,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
