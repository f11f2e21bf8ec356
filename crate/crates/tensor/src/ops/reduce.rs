use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::Result;
use crate::shape::normalize_axis;
use crate::tensor::Tensor;

/// (outer, len, inner) split of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Float> Tensor<T> {
    /// Max-subtracted softmax along `axis` (negative counts from the end).
    /// A constant slice maps to the uniform distribution.
    pub fn softmax(&self, axis: isize) -> Result<Tensor<T>> {
        let axis = normalize_axis(axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(x[base + j * inner]);
                }
                let mut s = T::zero();
                for j in 0..len {
                    let e = (x[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    s += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= s;
                }
            }
        }
        Tensor::from_op(out, self.shape().to_vec(), Op::Softmax { axis }, vec![self.clone()])
    }

    /// Sum along `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&self, axis: isize) -> Result<Tensor<T>> {
        let axis = normalize_axis(axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Tensor::from_op(out, shape, Op::SumAxis { axis }, vec![self.clone()])
    }

    pub fn mean_axis(&self, axis: isize) -> Result<Tensor<T>> {
        let a = normalize_axis(axis, self.rank())?;
        let len = self.dim(a) as f64;
        self.sum_axis(axis)?.scale(1.0 / len)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![1], Op::SumAll, vec![self.clone()])
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }
}

pub(crate) fn softmax_backward<T: Float>(axis: usize, out: &Tensor<T>, g: &[T]) -> Vec<T> {
    let (outer, len, inner) = split_axis(out.shape(), axis);
    let y = out.data();
    let mut gx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot += g[base + j * inner] * y[base + j * inner];
            }
            for j in 0..len {
                let k = base + j * inner;
                gx[k] = y[k] * (g[k] - dot);
            }
        }
    }
    gx
}

pub(crate) fn sum_axis_backward<T: Float>(axis: usize, input: &Tensor<T>, g: &[T]) -> Vec<T> {
    let (outer, len, inner) = split_axis(input.shape(), axis);
    let mut gx = vec![T::zero(); input.numel()];
    for o in 0..outer {
        for j in 0..len {
            gx[(o * len + j) * inner..(o * len + j + 1) * inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
        }
    }
    gx
}
