use super::const_param;
use crate::dtype::Float;
use crate::error::Result;
use crate::impl_module;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Float> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl_module!(LayerNorm { gamma, beta });

impl<T: Float> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: const_param(&[dim], 1.0),
            beta: const_param(&[dim], 0.0),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(self.eps)?.mul(&self.gamma)?.add(&self.beta)
    }
}
