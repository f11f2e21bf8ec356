use rand::Rng;

use super::{const_param, uniform_param};
use crate::dtype::Float;
use crate::error::Result;
use crate::impl_module;
use crate::tensor::Tensor;

/// Dense 2-D convolution over `[B, C, H, W]`.
/// Output side is `(H + 2·padding − k) / stride + 1`.
#[derive(Debug, Clone)]
pub struct Conv2dLayer<T: Float> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl_module!(Conv2dLayer { weight, bias });

impl<T: Float> Conv2dLayer<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        Conv2dLayer {
            weight: uniform_param(&[c_out, c_in, kernel, kernel], bound, rng),
            bias: Some(uniform_param(&[c_out], bound, rng)),
            stride,
            padding,
        }
    }

    /// Same-size 3×3 convolution.
    pub fn same3<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self::new(c_in, c_out, 3, 1, 1, rng)
    }

    pub fn pointwise<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self::new(c_in, c_out, 1, 1, 0, rng)
    }

    /// 1×1 identity mixing, zero bias.
    pub fn identity(c: usize) -> Self {
        let w = Tensor::from_fn(&[c, c, 1, 1], |i| if i / c == i % c { T::one() } else { T::zero() });
        Conv2dLayer {
            weight: w.with_requires_grad(true),
            bias: Some(const_param(&[c], 0.0)),
            stride: 1,
            padding: 0,
        }
    }

    /// `k×k` kernel that passes input channel `o` to output `o` unchanged.
    pub fn delta(c: usize, kernel: usize) -> Self {
        let center = kernel / 2;
        let w = Tensor::from_fn(&[c, c, kernel, kernel], |i| {
            let (o, rest) = (i / (c * kernel * kernel), i % (c * kernel * kernel));
            let (ci, ky, kx) = (rest / (kernel * kernel), (rest / kernel) % kernel, rest % kernel);
            if o == ci && ky == center && kx == center {
                T::one()
            } else {
                T::zero()
            }
        });
        Conv2dLayer {
            weight: w.with_requires_grad(true),
            bias: Some(const_param(&[c], 0.0)),
            stride: 1,
            padding: center,
        }
    }

    pub fn zeros(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Conv2dLayer {
            weight: const_param(&[c_out, c_in, kernel, kernel], 0.0),
            bias: Some(const_param(&[c_out], 0.0)),
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    /// Applies a 1×1 layer to token features `[B, N, C]` (same as a per-token linear map).
    pub fn forward_tokens(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, n, c) = (x.dim(0), x.dim(1), x.dim(2));
        let side = crate::shape::exact_sqrt(n).ok_or_else(|| {
            crate::TensorError::InvalidArgument(format!("{n} tokens do not form a square grid"))
        })?;
        let grid = x.transpose_last()?.reshape(&[b, c, side, side])?;
        let y = self.forward(&grid)?;
        let co = y.dim(1);
        y.reshape(&[b, co, n])?.transpose_last()
    }
}

/// Per-channel convolution with same-size output (odd kernel, padding k/2).
#[derive(Debug, Clone)]
pub struct DepthwiseConvLayer<T: Float> {
    pub weight: Tensor<T>,
    pub padding: usize,
}

impl_module!(DepthwiseConvLayer { weight });

impl<T: Float> DepthwiseConvLayer<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "same-size depthwise conv needs an odd kernel");
        let bound = 1.0 / kernel as f64;
        DepthwiseConvLayer {
            weight: uniform_param(&[channels, 1, kernel, kernel], bound, rng),
            padding: kernel / 2,
        }
    }

    /// Kernel with a single 1 at the center.
    pub fn delta(channels: usize, kernel: usize) -> Self {
        let kk = kernel * kernel;
        let w = Tensor::from_fn(&[channels, 1, kernel, kernel], |i| if i % kk == kk / 2 { T::one() } else { T::zero() });
        DepthwiseConvLayer {
            weight: w.with_requires_grad(true),
            padding: kernel / 2,
        }
    }

    pub fn zeros(channels: usize, kernel: usize) -> Self {
        DepthwiseConvLayer {
            weight: const_param(&[channels, 1, kernel, kernel], 0.0),
            padding: kernel / 2,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.depthwise_conv2d(&self.weight, self.padding)
    }
}
