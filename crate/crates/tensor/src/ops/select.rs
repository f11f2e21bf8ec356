use std::cmp::Ordering;

use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

impl<T: Float> Tensor<T> {
    /// For `[.., N, N]`, the mean of the `k` largest entries of each row,
    /// skipping the diagonal. Ties go to the lower column index. Output `[.., N]`.
    pub fn topk_mean_rows(&self, k: usize) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 || self.dim(r - 1) != self.dim(r - 2) {
            return Err(TensorError::InvalidArgument(format!(
                "topk_mean_rows expects square trailing axes, got {:?}",
                self.shape()
            )));
        }
        let n = self.dim(r - 1);
        if k == 0 || k > n - 1 {
            return Err(TensorError::InvalidArgument(format!("k = {k} outside [1, {}]", n - 1)));
        }
        let x = self.data();
        let rows = x.len() / n;
        let mut picks = Vec::with_capacity(rows * k);
        let mut out = Vec::with_capacity(rows);
        let inv_k = T::of(1.0 / k as f64);
        let mut cols: Vec<usize> = Vec::with_capacity(n);
        for row in 0..rows {
            let i = row % n;
            let xr = &x[row * n..(row + 1) * n];
            cols.clear();
            cols.extend((0..n).filter(|&j| j != i));
            cols.sort_by(|&a, &b| xr[b].partial_cmp(&xr[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            let top = &cols[..k];
            out.push(top.iter().map(|&j| xr[j]).sum::<T>() * inv_k);
            picks.extend_from_slice(top);
        }
        let mut shape = self.shape().to_vec();
        shape.pop();
        Tensor::from_op(out, shape, Op::TopkMeanRows { k, picks }, vec![self.clone()])
    }
}

pub(crate) fn topk_mean_backward<T: Float>(k: usize, picks: &[usize], input: &Tensor<T>, g: &[T]) -> Vec<T> {
    let n = *input.shape().last().expect("rank >= 2");
    let inv_k = T::of(1.0 / k as f64);
    let mut gx = vec![T::zero(); input.numel()];
    for (row, &gr) in g.iter().enumerate() {
        for &j in &picks[row * k..(row + 1) * k] {
            gx[row * n + j] += gr * inv_k;
        }
    }
    gx
}
