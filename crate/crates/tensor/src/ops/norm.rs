use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::Result;
use crate::tensor::Tensor;

impl<T: Float> Tensor<T> {
    /// Zero-mean, unit-variance normalization over the last axis (no affine).
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor<T>> {
        let d = *self.shape().last().expect("rank >= 1");
        let x = self.data();
        let rows = x.len() / d;
        let mut out = vec![T::zero(); x.len()];
        let mut rstd = Vec::with_capacity(rows);
        let inv_d = T::of(1.0 / d as f64);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::of(eps)).sqrt();
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            rstd.push(rs);
        }
        Tensor::from_op(out, self.shape().to_vec(), Op::LayerNorm { rstd }, vec![self.clone()])
    }
}

pub(crate) fn layer_norm_backward<T: Float>(rstd: &[T], out: &Tensor<T>, g: &[T]) -> Vec<T> {
    let d = *out.shape().last().expect("rank >= 1");
    let y = out.data();
    let inv_d = T::of(1.0 / d as f64);
    let mut gx = vec![T::zero(); y.len()];
    for (r, &rs) in rstd.iter().enumerate() {
        let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
        let mean_g = gr.iter().copied().sum::<T>() * inv_d;
        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        for i in 0..d {
            gx[r * d + i] = rs * (gr[i] - mean_g - yr[i] * mean_gy);
        }
    }
    gx
}
