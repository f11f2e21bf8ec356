//! Dense row-major tensors with tape-based reverse-mode differentiation, a
//! central-difference gradient checker, and the neural layers built on them.
//!
//! Every op returns `Result`: shape violations and non-finite outputs are
//! reported where they happen instead of propagating.

mod autograd;
mod dtype;
mod error;
pub mod gradcheck;
pub mod nn;
mod ops;
pub mod shape;
mod tensor;

pub use autograd::{BinaryOp, CustomOp, UnaryOp};
pub use dtype::{DType, Float};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::elementwise::DOMAIN_EPS;
pub use ops::loss::BCE_EPS;
pub use ops::rope::rope_angle;
pub use ops::upsample::bilinear_taps;
pub use tensor::{grad_enabled, no_grad, Tensor};

impl<T: Float> Tensor<T> {
    /// Builds a tracked tensor whose backward is supplied by `op`.
    pub fn from_custom(data: Vec<T>, shape: &[usize], inputs: Vec<Tensor<T>>, op: Box<dyn CustomOp<T>>) -> Result<Tensor<T>> {
        if shape::numel(shape) != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "custom",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Tensor::from_op(data, shape.to_vec(), autograd::Op::Custom(op), inputs)
    }
}
