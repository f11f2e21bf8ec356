pub mod affinity;
pub mod checkpoint;
pub mod detector;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod ssm;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{CoreError, Result};

use tamperscope_tensor::{Float, Tensor};

/// Side length of a square token grid holding `n` tokens.
pub fn grid_side(n: usize) -> Result<usize> {
    tamperscope_tensor::shape::exact_sqrt(n).ok_or(CoreError::NotSquareGrid(n))
}

/// `[B, N, C]` tokens → `[B, C, g, g]` feature map.
pub fn to_grid<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, n, c) = (x.dim(0), x.dim(1), x.dim(2));
    let side = grid_side(n)?;
    Ok(x.transpose_last()?.reshape(&[b, c, side, side])?)
}

/// `[B, C, g, g]` feature map → `[B, g·g, C]` tokens.
pub fn from_grid<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c) = (x.dim(0), x.dim(1));
    let n = x.dim(2) * x.dim(3);
    Ok(x.reshape(&[b, c, n])?.transpose_last()?)
}
