use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFiniteResult { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss is not connected to any tensor that requires grad")]
    DisconnectedGraph,
    #[error("feature dimension {0} must be even")]
    OddDimension(usize),
    #[error("invalid upsample target {target:?} for input {input:?}")]
    InvalidTarget {
        input: (usize, usize),
        target: (usize, usize),
    },
    #[error("drop rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("function under check is not deterministic (max drift {0:e})")]
    NonDeterministicFunction(f64),
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
