use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Source taps `(i0, i1, w0, w1)` for each of `out` positions when resizing
/// an axis of length `inp` with half-pixel centers (align-corners = false).
pub fn bilinear_taps(inp: usize, out: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            let l1 = src - i0 as f64;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

impl<T: Float> Tensor<T> {
    /// Bilinear resize of `[B, C, h, w]` to `[B, C, height, width]`.
    pub fn upsample_bilinear(&self, height: usize, width: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(TensorError::InvalidArgument(format!(
                "upsample expects [B, C, H, W], got {:?}",
                self.shape()
            )));
        }
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        if height < h || width < w {
            return Err(TensorError::InvalidTarget {
                input: (h, w),
                target: (height, width),
            });
        }
        let ty = bilinear_taps(h, height);
        let tx = bilinear_taps(w, width);
        let x = self.data();
        let mut out = Vec::with_capacity(b * c * height * width);
        for plane in 0..b * c {
            let xp = &x[plane * h * w..(plane + 1) * h * w];
            for &(y0, y1, wy0, wy1) in &ty {
                for &(x0, x1, wx0, wx1) in &tx {
                    let v = T::of(wy0 * wx0) * xp[y0 * w + x0]
                        + T::of(wy0 * wx1) * xp[y0 * w + x1]
                        + T::of(wy1 * wx0) * xp[y1 * w + x0]
                        + T::of(wy1 * wx1) * xp[y1 * w + x1];
                    out.push(v);
                }
            }
        }
        Tensor::from_op(out, vec![b, c, height, width], Op::Upsample, vec![self.clone()])
    }
}

pub(crate) fn backward<T: Float>(input: &Tensor<T>, out: &Tensor<T>, g: &[T]) -> Vec<T> {
    let (h, w) = (input.dim(2), input.dim(3));
    let (height, width) = (out.dim(2), out.dim(3));
    let ty = bilinear_taps(h, height);
    let tx = bilinear_taps(w, width);
    let planes = input.dim(0) * input.dim(1);
    let mut gx = vec![T::zero(); input.numel()];
    for plane in 0..planes {
        let gp = &mut gx[plane * h * w..(plane + 1) * h * w];
        let go = &g[plane * height * width..(plane + 1) * height * width];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = go[oy * width + ox];
                gp[y0 * w + x0] += T::of(wy0 * wx0) * v;
                gp[y0 * w + x1] += T::of(wy0 * wx1) * v;
                gp[y1 * w + x0] += T::of(wy1 * wx0) * v;
                gp[y1 * w + x1] += T::of(wy1 * wx1) * v;
            }
        }
    }
    gx
}
