use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

impl<T: Float> Tensor<T> {
    /// Mean binary cross-entropy of probabilities `self` against `target`.
    pub fn bce(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                lhs: self.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let (lo, hi) = (T::of(BCE_EPS), T::of(1.0 - BCE_EPS));
        let n = T::of(self.numel() as f64);
        let total: T = self
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let p = p.max(lo).min(hi);
                -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
            })
            .sum();
        Tensor::from_op(
            vec![total / n],
            vec![1],
            Op::Bce { target: target.to_vec() },
            vec![self.clone()],
        )
    }
}

pub(crate) fn bce_backward<T: Float>(p: &Tensor<T>, target: &[T], g: &[T]) -> Vec<T> {
    let (lo, hi) = (T::of(BCE_EPS), T::of(1.0 - BCE_EPS));
    let scale = g[0] / T::of(p.numel() as f64);
    p.data()
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            if p < lo || p > hi {
                T::zero()
            } else {
                scale * ((T::one() - y) / (T::one() - p) - y / p)
            }
        })
        .collect()
}
