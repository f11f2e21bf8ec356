use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::ops::reduce::split_axis;
use crate::shape::{normalize_axis, numel, strides};
use crate::tensor::Tensor;

fn permute_data<T: Float>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

impl<T: Float> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape, vec![self.clone()])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let mut seen = vec![false; self.rank()];
        if perm.len() != self.rank() || perm.iter().any(|&p| p >= self.rank() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidArgument(format!(
                "permutation {perm:?} invalid for rank {}",
                self.rank()
            )));
        }
        let (data, shape) = permute_data(self.data(), self.shape(), perm);
        Tensor::from_op(data, shape, Op::Permute { perm: perm.to_vec() }, vec![self.clone()])
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::InvalidAxis { axis: 1, rank: r });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: isize, start: usize, len: usize) -> Result<Tensor<T>> {
        let axis = normalize_axis(axis, self.rank())?;
        if len == 0 || start + len > self.dim(axis) {
            return Err(TensorError::InvalidArgument(format!(
                "narrow [{start}, {}) out of range for axis of size {}",
                start + len,
                self.dim(axis)
            )));
        }
        let (outer, full, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(out, shape, Op::Narrow { axis, start }, vec![self.clone()])
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor<T>], axis: isize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let axis = normalize_axis(axis, first.rank())?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for p in parts {
            let mut s = p.shape().to_vec();
            if s.len() != shape.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: s,
                });
            }
            shape[axis] += s[axis];
            s[axis] = 0;
            let mut f = first.shape().to_vec();
            f[axis] = 0;
            if s != f {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let len = p.dim(axis);
                out.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        Tensor::from_op(out, shape, Op::Concat { axis }, parts.to_vec())
    }
}

pub(crate) fn permute_backward<T: Float>(perm: &[usize], out: &Tensor<T>, g: &[T]) -> Vec<T> {
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    permute_data(g, out.shape(), &inverse).0
}

pub(crate) fn narrow_backward<T: Float>(axis: usize, start: usize, input: &Tensor<T>, out: &Tensor<T>, g: &[T]) -> Vec<T> {
    let (outer, full, inner) = split_axis(input.shape(), axis);
    let len = out.dim(axis);
    let mut gx = vec![T::zero(); input.numel()];
    for o in 0..outer {
        gx[(o * full + start) * inner..(o * full + start + len) * inner]
            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    gx
}

pub(crate) fn concat_backward<T: Float>(axis: usize, inputs: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
    let (outer, total, inner) = split_axis(out.shape(), axis);
    let mut offset = 0;
    inputs
        .iter()
        .map(|p| {
            let len = p.dim(axis);
            let mut gp = Vec::with_capacity(p.numel());
            for o in 0..outer {
                gp.extend_from_slice(&g[(o * total + offset) * inner..(o * total + offset + len) * inner]);
            }
            offset += len;
            p.requires_grad().then_some(gp)
        })
        .collect()
}
