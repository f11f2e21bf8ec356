use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Rotation angle for token `pos` and feature pair `pair` out of `dim` features.
#[inline]
pub fn rope_angle(pos: usize, pair: usize, dim: usize, base: f64) -> f64 {
    pos as f64 / base.powf(2.0 * pair as f64 / dim as f64)
}

/// Rotates each feature pair `(2i, 2i+1)` of every row by `sign * angle`.
fn rotate<T: Float>(x: &[T], shape: &[usize], base: f64, sign: f64) -> Vec<T> {
    let c = shape[shape.len() - 1];
    let n = shape[shape.len() - 2];
    let mut out = vec![T::zero(); x.len()];
    let table: Vec<(T, T)> = (0..n)
        .flat_map(|pos| {
            (0..c / 2).map(move |i| {
                let a = sign * rope_angle(pos, i, c, base);
                (T::of(a.cos()), T::of(a.sin()))
            })
        })
        .collect();
    for (row_idx, (src, dst)) in x.chunks(c).zip(out.chunks_mut(c)).enumerate() {
        let pos = row_idx % n;
        for i in 0..c / 2 {
            let (cos, sin) = table[pos * (c / 2) + i];
            let (a, b) = (src[2 * i], src[2 * i + 1]);
            dst[2 * i] = a * cos - b * sin;
            dst[2 * i + 1] = a * sin + b * cos;
        }
    }
    out
}

impl<T: Float> Tensor<T> {
    /// Rotary position embedding over `[.., N, C]`: token `n` (its index along
    /// the second-to-last axis) has pair `i` rotated by `n / base^(2i/C)`.
    pub fn rope(&self, base: f64) -> Result<Tensor<T>> {
        if self.rank() < 2 {
            return Err(TensorError::InvalidArgument("rope expects [.., N, C]".into()));
        }
        let c = self.dim(self.rank() - 1);
        if !c.is_multiple_of(2) {
            return Err(TensorError::OddDimension(c));
        }
        let out = rotate(self.data(), self.shape(), base, 1.0);
        Tensor::from_op(out, self.shape().to_vec(), Op::Rope { base }, vec![self.clone()])
    }
}

pub(crate) fn backward<T: Float>(base: f64, out: &Tensor<T>, g: &[T]) -> Vec<T> {
    rotate(g, out.shape(), base, -1.0)
}
