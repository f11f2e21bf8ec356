use rand::Rng;

use super::{const_param, uniform_param};
use crate::dtype::Float;
use crate::error::Result;
use crate::impl_module;
use crate::tensor::Tensor;

/// `y = x · W + b` over the last axis; `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T: Float> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl_module!(Linear { weight, bias });

impl<T: Float> Linear<T> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            weight: uniform_param(&[d_in, d_out], bound, rng),
            bias: bias.then(|| uniform_param(&[d_out], bound, rng)),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize, bias: bool) -> Self {
        Linear {
            weight: const_param(&[d_in, d_out], 0.0),
            bias: bias.then(|| const_param(&[d_out], 0.0)),
        }
    }

    pub fn identity(d: usize) -> Self {
        Linear {
            weight: Tensor::from_fn(&[d, d], |i| if i / d == i % d { T::one() } else { T::zero() }).with_requires_grad(true),
            bias: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn d_out(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

/// Two-layer feed-forward with SiLU in between.
#[derive(Debug, Clone)]
pub struct Mlp<T: Float> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl_module!(Mlp { fc1, fc2 });

impl<T: Float> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::new(dim, hidden, true, rng),
            fc2: Linear::new(hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.silu()?)
    }
}
