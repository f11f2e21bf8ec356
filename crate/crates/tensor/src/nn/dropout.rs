use rand::Rng;

use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Stochastic depth: in training, each sample (leading axis) keeps the branch
/// with probability `1 − rate`, rescaled by `1 / (1 − rate)`. `rate = 1`
/// drops the branch entirely. Identity in eval mode or at `rate = 0`.
pub fn drop_path<T: Float, R: Rng + ?Sized>(x: &Tensor<T>, rate: f64, training: bool, rng: &mut R) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
        return Err(TensorError::InvalidRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let b = x.dim(0);
    let keep = 1.0 - rate;
    let mask: Vec<T> = (0..b)
        .map(|_| {
            if keep > 0.0 && rng.random::<f64>() < keep {
                T::of(1.0 / keep)
            } else {
                T::zero()
            }
        })
        .collect();
    let mut mshape = vec![1; x.rank()];
    mshape[0] = b;
    x.mul(&Tensor::new(mask, &mshape)?)
}
