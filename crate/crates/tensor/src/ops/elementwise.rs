use crate::autograd::{BinaryOp, Op, UnaryOp};
use crate::dtype::Float;
use crate::error::Result;
use crate::shape::{broadcast_shape, numel, source_indices, Layout};
use crate::tensor::Tensor;

/// Magnitude floor for log arguments and divisors.
pub const DOMAIN_EPS: f64 = 1e-12;

#[inline]
fn guard_div<T: Float>(b: T) -> T {
    let eps = T::of(DOMAIN_EPS);
    if b.abs() >= eps {
        b
    } else if b < T::zero() {
        -eps
    } else {
        eps
    }
}

#[inline]
fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Float>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Float> Tensor<T> {
    fn binary(&self, rhs: &Tensor<T>, op: BinaryOp) -> Result<Tensor<T>> {
        let name = Op::<T>::Binary(op).name();
        let out_shape = broadcast_shape(name, self.shape(), rhs.shape())?;
        let (a, b) = (self.data(), rhs.data());
        let f = |x: T, y: T| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / guard_div(y),
        };
        let la = Layout::of(self.shape(), &out_shape);
        let lb = Layout::of(rhs.shape(), &out_shape);
        let data: Vec<T> = match (&la, &lb) {
            (Layout::Same, Layout::Same) => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            (Layout::Same, Layout::Scalar) => a.iter().map(|&x| f(x, b[0])).collect(),
            (Layout::Scalar, Layout::Same) => b.iter().map(|&y| f(a[0], y)).collect(),
            (Layout::Same, Layout::Suffix(n)) => a.iter().enumerate().map(|(i, &x)| f(x, b[i % n])).collect(),
            _ => {
                let ia = source_indices(&la, &out_shape);
                let ib = source_indices(&lb, &out_shape);
                ia.iter().zip(&ib).map(|(&i, &j)| f(a[i], b[j])).collect()
            }
        };
        Tensor::from_op(data, out_shape, Op::Binary(op), vec![self.clone(), rhs.clone()])
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, BinaryOp::Add)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, BinaryOp::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, BinaryOp::Mul)
    }

    /// Division with the divisor's magnitude floored at `DOMAIN_EPS`.
    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, BinaryOp::Div)
    }

    fn unary(&self, op: UnaryOp) -> Result<Tensor<T>> {
        let f: Box<dyn Fn(T) -> T> = match op {
            UnaryOp::Neg => Box::new(|x: T| -x),
            UnaryOp::Exp => Box::new(|x: T| x.exp()),
            UnaryOp::Log => Box::new(|x: T| x.max(T::of(DOMAIN_EPS)).ln()),
            UnaryOp::Elu => Box::new(|x: T| if x > T::zero() { x } else { x.exp_m1() }),
            UnaryOp::Silu => Box::new(|x: T| x * sigmoid(x)),
            UnaryOp::Sigmoid => Box::new(sigmoid),
            UnaryOp::Softplus => Box::new(softplus),
            UnaryOp::Sqrt => Box::new(|x: T| x.max(T::zero()).sqrt()),
            UnaryOp::Square => Box::new(|x: T| x * x),
            UnaryOp::Scale(c) => Box::new(move |x: T| x * T::of(c)),
            UnaryOp::Shift(c) => Box::new(move |x: T| x + T::of(c)),
        };
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Unary(op), vec![self.clone()])
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Neg)
    }
    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Exp)
    }
    /// Natural log with the argument floored at `DOMAIN_EPS`.
    pub fn log(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Log)
    }
    /// ELU with unit slope parameter.
    pub fn elu(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Elu)
    }
    pub fn silu(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Silu)
    }
    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Sigmoid)
    }
    pub fn softplus(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Softplus)
    }
    pub fn sqrt(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Sqrt)
    }
    pub fn square(&self) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Square)
    }
    pub fn scale(&self, c: f64) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Scale(c))
    }
    pub fn shift(&self, c: f64) -> Result<Tensor<T>> {
        self.unary(UnaryOp::Shift(c))
    }
}

pub(crate) fn unary_backward<T: Float>(op: UnaryOp, x: &Tensor<T>, out: &Tensor<T>, g: &[T]) -> Vec<T> {
    let xs = x.data();
    let ys = out.data();
    let one = T::one();
    let d = |i: usize| -> T {
        let (xv, yv) = (xs[i], ys[i]);
        match op {
            UnaryOp::Neg => -one,
            UnaryOp::Exp => yv,
            UnaryOp::Log => {
                if xv >= T::of(DOMAIN_EPS) {
                    one / xv
                } else {
                    T::zero()
                }
            }
            UnaryOp::Elu => {
                if xv > T::zero() {
                    one
                } else {
                    yv + one
                }
            }
            UnaryOp::Silu => {
                let s = sigmoid(xv);
                s * (one + xv * (one - s))
            }
            UnaryOp::Sigmoid => yv * (one - yv),
            UnaryOp::Softplus => sigmoid(xv),
            UnaryOp::Sqrt => {
                if yv > T::zero() {
                    T::of(0.5) / yv
                } else {
                    T::zero()
                }
            }
            UnaryOp::Square => T::of(2.0) * xv,
            UnaryOp::Scale(c) => T::of(c),
            UnaryOp::Shift(_) => one,
        }
    };
    g.iter().enumerate().map(|(i, &gi)| gi * d(i)).collect()
}

/// Sums `g` (output-shaped) down to an input's shape.
pub(crate) fn reduce_to<T: Float>(g: &[T], input_shape: &[usize], out_shape: &[usize]) -> Vec<T> {
    let n = numel(input_shape);
    match Layout::of(input_shape, out_shape) {
        Layout::Same => g.to_vec(),
        Layout::Scalar => vec![g.iter().copied().sum()],
        Layout::Suffix(len) => {
            let mut acc = vec![T::zero(); n];
            for (i, &v) in g.iter().enumerate() {
                acc[i % len] += v;
            }
            acc
        }
        layout @ Layout::General(_) => {
            let mut acc = vec![T::zero(); n];
            for (&src, &v) in source_indices(&layout, out_shape).iter().zip(g) {
                acc[src] += v;
            }
            acc
        }
    }
}

pub(crate) fn binary_backward<T: Float>(op: BinaryOp, inputs: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
    let (a, b) = (&inputs[0], &inputs[1]);
    let out_shape = out.shape();
    let la = Layout::of(a.shape(), out_shape);
    let lb = Layout::of(b.shape(), out_shape);
    let gather = |layout: &Layout, t: &Tensor<T>| -> Vec<T> {
        match layout {
            Layout::Same => t.to_vec(),
            _ => source_indices(layout, out_shape).iter().map(|&i| t.data()[i]).collect(),
        }
    };
    let ga = a.requires_grad().then(|| {
        let local: Vec<T> = match op {
            BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
            BinaryOp::Mul => gather(&lb, b).iter().zip(g).map(|(&bv, &gv)| gv * bv).collect(),
            BinaryOp::Div => gather(&lb, b).iter().zip(g).map(|(&bv, &gv)| gv / guard_div(bv)).collect(),
        };
        reduce_to(&local, a.shape(), out_shape)
    });
    let gb = b.requires_grad().then(|| {
        let local: Vec<T> = match op {
            BinaryOp::Add => g.to_vec(),
            BinaryOp::Sub => g.iter().map(|&v| -v).collect(),
            BinaryOp::Mul => gather(&la, a).iter().zip(g).map(|(&av, &gv)| gv * av).collect(),
            BinaryOp::Div => {
                let bv = gather(&lb, b);
                gather(&la, a)
                    .iter()
                    .zip(&bv)
                    .zip(g)
                    .map(|((&av, &bv), &gv)| {
                        let d = guard_div(bv);
                        -gv * av / (d * d)
                    })
                    .collect()
            }
        };
        reduce_to(&local, b.shape(), out_shape)
    });
    vec![ga, gb]
}
