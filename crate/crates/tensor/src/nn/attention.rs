use rand::Rng;

use super::uniform_param;
use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::impl_module;
use crate::tensor::Tensor;

/// Scaled dot-product attention split over `heads`, no projection biases.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<T: Float> {
    pub heads: usize,
    pub head_dim: usize,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

impl_module!(MultiHeadAttention { wq, wk, wv, wo });

impl<T: Float> MultiHeadAttention<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(TensorError::InvalidArgument(format!("{dim} channels not divisible into {heads} heads")));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        Ok(MultiHeadAttention {
            heads,
            head_dim: dim / heads,
            wq: uniform_param(&[dim, dim], bound, rng),
            wk: uniform_param(&[dim, dim], bound, rng),
            wv: uniform_param(&[dim, dim], bound, rng),
            wo: uniform_param(&[dim, dim], bound, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.heads * self.head_dim
    }

    fn split_heads(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, n) = (x.dim(0), x.dim(1));
        x.reshape(&[b, n, self.heads, self.head_dim])?.permute(&[0, 2, 1, 3])
    }

    /// Attention output `[B, N, C]` and the probabilities `[B, H, N, M]`.
    /// `bias`, when given, is `[B, N, M]` and is added to every head's scores.
    pub fn forward_with_probs(&self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<(Tensor<T>, Tensor<T>)> {
        let c = self.dim();
        for t in [q, k, v] {
            if t.rank() != 3 || t.dim(2) != c {
                return Err(TensorError::ShapeMismatch {
                    op: "multi_head_attention",
                    lhs: vec![c],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if k.shape() != v.shape() || q.dim(0) != k.dim(0) {
            return Err(TensorError::ShapeMismatch {
                op: "multi_head_attention",
                lhs: k.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let (b, n, m) = (q.dim(0), q.dim(1), k.dim(1));
        let qh = self.split_heads(&q.matmul(&self.wq)?)?;
        let kh = self.split_heads(&k.matmul(&self.wk)?)?;
        let vh = self.split_heads(&v.matmul(&self.wv)?)?;
        let mut scores = qh.matmul(&kh.transpose_last()?)?.scale(1.0 / (self.head_dim as f64).sqrt())?;
        if let Some(bias) = bias {
            scores = scores.add(&bias.reshape(&[bias.dim(0), 1, n, m])?)?;
        }
        let probs = scores.softmax(-1)?;
        let ctx = probs.matmul(&vh)?.permute(&[0, 2, 1, 3])?.reshape(&[b, n, c])?;
        Ok((ctx.matmul(&self.wo)?, probs))
    }

    pub fn forward(&self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        Ok(self.forward_with_probs(q, k, v, bias)?.0)
    }
}

/// Kernelized attention with feature map `φ(x) = ELU(x) + 1`, where `kv`
/// serves as both keys and values:
/// `out_i = φ(q_i)ᵀ Σ_j φ(k_j) v_jᵀ / φ(q_i)ᵀ Σ_j φ(k_j)`.
/// `φ > 0`, so the denominator is a sum of `N` positive terms.
pub fn linear_attention<T: Float>(q: &Tensor<T>, kv: &Tensor<T>) -> Result<Tensor<T>> {
    if q.rank() != 3 || q.shape() != kv.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "linear_attention",
            lhs: q.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        });
    }
    let phi_q = q.elu()?.shift(1.0)?;
    let phi_k = kv.elu()?.shift(1.0)?;
    let phi_kt = phi_k.transpose_last()?;
    let state = phi_kt.matmul(kv)?;
    let numer = phi_q.matmul(&state)?;
    let norm = phi_kt.sum_axis(-1)?;
    let denom = phi_q.matmul(&norm)?;
    numer.div(&denom)
}
