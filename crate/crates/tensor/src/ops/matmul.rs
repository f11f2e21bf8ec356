use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::shape::{broadcast_shape, numel, ravel, unravel};
use crate::tensor::Tensor;

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
fn gemm_acc<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += aᵀ · b` for `a: k×m`, `b: k×n`, `c: m×n`.
fn gemm_tn_acc<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: m×k`, `b: n×k`, `c: m×n`.
fn gemm_nt_acc<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

struct Plan {
    batch: Vec<usize>,
    a_batch: Vec<usize>,
    b_batch: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
}

impl Plan {
    fn new(a: &[usize], b: &[usize]) -> Result<Plan> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let a_batch = a[..a.len() - 2].to_vec();
        let b_batch = b[..b.len() - 2].to_vec();
        let batch = broadcast_shape("matmul", &a_batch, &b_batch)?;
        Ok(Plan { batch, a_batch, b_batch, m, k, n })
    }

    /// Batch offsets (in matrices) into `a` and `b` for each output batch index.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let nb = numel(&self.batch);
        let map = |idx: &[usize], own: &[usize]| -> usize {
            let off = idx.len() - own.len();
            let sub: Vec<usize> = own.iter().enumerate().map(|(d, &s)| if s == 1 { 0 } else { idx[off + d] }).collect();
            ravel(&sub, own)
        };
        (0..nb)
            .map(|bi| {
                let idx = unravel(bi, &self.batch);
                (map(&idx, &self.a_batch), map(&idx, &self.b_batch))
            })
            .collect()
    }
}

impl<T: Float> Tensor<T> {
    /// Batched matrix product over the last two axes with broadcast batch axes.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let plan = Plan::new(self.shape(), rhs.shape())?;
        let (m, k, n) = (plan.m, plan.k, plan.n);
        let offsets = plan.offsets();
        let mut out = vec![T::zero(); offsets.len() * m * n];
        for (bi, &(ia, ib)) in offsets.iter().enumerate() {
            gemm_acc(
                &self.data()[ia * m * k..(ia + 1) * m * k],
                &rhs.data()[ib * k * n..(ib + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = plan.batch.clone();
        shape.extend([m, n]);
        Tensor::from_op(out, shape, Op::MatMul, vec![self.clone(), rhs.clone()])
    }
}

pub(crate) fn backward<T: Float>(inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
    let (a, b) = (&inputs[0], &inputs[1]);
    let plan = Plan::new(a.shape(), b.shape()).expect("validated in forward");
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let offsets = plan.offsets();
    let ga = a.requires_grad().then(|| {
        let mut ga = vec![T::zero(); a.numel()];
        for (bi, &(ia, ib)) in offsets.iter().enumerate() {
            gemm_nt_acc(
                &g[bi * m * n..(bi + 1) * m * n],
                &b.data()[ib * k * n..(ib + 1) * k * n],
                &mut ga[ia * m * k..(ia + 1) * m * k],
                m,
                n,
                k,
            );
        }
        ga
    });
    let gb = b.requires_grad().then(|| {
        let mut gb = vec![T::zero(); b.numel()];
        for (bi, &(ia, ib)) in offsets.iter().enumerate() {
            gemm_tn_acc(
                &a.data()[ia * m * k..(ia + 1) * m * k],
                &g[bi * m * n..(bi + 1) * m * n],
                &mut gb[ib * k * n..(ib + 1) * k * n],
                k,
                m,
                n,
            );
        }
        gb
    });
    vec![ga, gb]
}
