use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// 1-D rotary embedding over the flattened token index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoPEConfig {
    pub base: f64,
    pub dim: usize,
}

impl RoPEConfig {
    pub fn new(dim: usize) -> Result<Self> {
        if !dim.is_multiple_of(2) {
            return Err(TensorError::OddDimension(dim));
        }
        Ok(RoPEConfig { base: 10_000.0, dim })
    }
}

pub fn rope<T: Float>(x: &Tensor<T>, cfg: &RoPEConfig) -> Result<Tensor<T>> {
    if !cfg.dim.is_multiple_of(2) {
        return Err(TensorError::OddDimension(cfg.dim));
    }
    let c = x.shape().last().copied().unwrap_or(0);
    if c != cfg.dim {
        return Err(TensorError::ShapeMismatch {
            op: "rope",
            lhs: vec![cfg.dim],
            rhs: x.shape().to_vec(),
        });
    }
    x.rope(cfg.base)
}
