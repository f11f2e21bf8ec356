//! Parameterized layers and functional blocks.

mod attention;
mod conv;
mod dropout;
mod linear;
mod module;
mod norm;
mod rope;

pub use attention::{linear_attention, MultiHeadAttention};
pub use conv::{Conv2dLayer, DepthwiseConvLayer};
pub use dropout::drop_path;
pub use linear::{Linear, Mlp};
pub use module::{join, Module};
pub use norm::LayerNorm;
pub use rope::{rope, RoPEConfig};

use rand::Rng;

use crate::dtype::Float;
use crate::tensor::Tensor;

/// Trainable leaf drawn from `U(-bound, bound)`.
pub fn uniform_param<T: Float, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::uniform(shape, -bound, bound, rng).with_requires_grad(true)
}

pub fn const_param<T: Float>(shape: &[usize], v: f64) -> Tensor<T> {
    Tensor::full(shape, T::of(v)).with_requires_grad(true)
}
