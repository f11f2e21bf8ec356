//! Reverse-mode differentiation over the graph recorded by forward ops.

use std::collections::{HashMap, HashSet};

use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::Tensor;

/// Backward rule for operations defined outside this crate.
pub trait CustomOp<T: Float>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient of
    /// `output`. `None` for inputs that receive no gradient.
    fn backward(&self, inputs: &[Tensor<T>], output: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Elu,
    Silu,
    Sigmoid,
    Softplus,
    Sqrt,
    Square,
    Scale(f64),
    Shift(f64),
}

pub(crate) enum Op<T: Float> {
    Binary(BinaryOp),
    Unary(UnaryOp),
    MatMul,
    Softmax { axis: usize },
    SumAxis { axis: usize },
    SumAll,
    Reshape,
    Permute { perm: Vec<usize> },
    Narrow { axis: usize, start: usize },
    Concat { axis: usize },
    Conv2d { stride: usize, padding: usize },
    DepthwiseConv2d { padding: usize },
    Upsample,
    LayerNorm { rstd: Vec<T> },
    Rope { base: f64 },
    TopkMeanRows { k: usize, picks: Vec<usize> },
    Bce { target: Vec<T> },
    Custom(Box<dyn CustomOp<T>>),
}

impl<T: Float> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Binary(BinaryOp::Add) => "add",
            Op::Binary(BinaryOp::Sub) => "sub",
            Op::Binary(BinaryOp::Mul) => "mul",
            Op::Binary(BinaryOp::Div) => "div",
            Op::Unary(u) => match u {
                UnaryOp::Neg => "neg",
                UnaryOp::Exp => "exp",
                UnaryOp::Log => "log",
                UnaryOp::Elu => "elu",
                UnaryOp::Silu => "silu",
                UnaryOp::Sigmoid => "sigmoid",
                UnaryOp::Softplus => "softplus",
                UnaryOp::Sqrt => "sqrt",
                UnaryOp::Square => "square",
                UnaryOp::Scale(_) => "scale",
                UnaryOp::Shift(_) => "shift",
            },
            Op::MatMul => "matmul",
            Op::Softmax { .. } => "softmax",
            Op::SumAxis { .. } => "sum_axis",
            Op::SumAll => "sum",
            Op::Reshape => "reshape",
            Op::Permute { .. } => "permute",
            Op::Narrow { .. } => "narrow",
            Op::Concat { .. } => "concat",
            Op::Conv2d { .. } => "conv2d",
            Op::DepthwiseConv2d { .. } => "depthwise_conv2d",
            Op::Upsample => "bilinear_upsample",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Rope { .. } => "rope",
            Op::TopkMeanRows { .. } => "topk_mean_rows",
            Op::Bce { .. } => "bce",
            Op::Custom(c) => c.name(),
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        match self {
            Op::Binary(b) => ops::elementwise::binary_backward(*b, inputs, out, g),
            Op::Unary(u) => vec![Some(ops::elementwise::unary_backward(*u, &inputs[0], out, g))],
            Op::MatMul => ops::matmul::backward(inputs, out, g),
            Op::Softmax { axis } => vec![Some(ops::reduce::softmax_backward(*axis, out, g))],
            Op::SumAxis { axis } => vec![Some(ops::reduce::sum_axis_backward(*axis, &inputs[0], g))],
            Op::SumAll => vec![Some(vec![g[0]; inputs[0].numel()])],
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Permute { perm } => vec![Some(ops::layout::permute_backward(perm, out, g))],
            Op::Narrow { axis, start } => vec![Some(ops::layout::narrow_backward(*axis, *start, &inputs[0], out, g))],
            Op::Concat { axis } => ops::layout::concat_backward(*axis, inputs, out, g),
            Op::Conv2d { stride, padding } => ops::conv::conv2d_backward(*stride, *padding, inputs, out, g),
            Op::DepthwiseConv2d { padding } => ops::conv::depthwise_backward(*padding, inputs, out, g),
            Op::Upsample => vec![Some(ops::upsample::backward(&inputs[0], out, g))],
            Op::LayerNorm { rstd } => vec![Some(ops::norm::layer_norm_backward(rstd, out, g))],
            Op::Rope { base } => vec![Some(ops::rope::backward(*base, out, g))],
            Op::TopkMeanRows { k, picks } => vec![Some(ops::select::topk_mean_backward(*k, picks, &inputs[0], g))],
            Op::Bce { target } => vec![Some(ops::loss::bce_backward(&inputs[0], target, g))],
            Op::Custom(c) => c.backward(inputs, out, g),
        }
    }
}

pub(crate) struct GradFn<T: Float> {
    pub(crate) op: Op<T>,
    pub(crate) inputs: Vec<Tensor<T>>,
}

impl<T: Float> Tensor<T> {
    /// Back-propagates from this scalar, accumulating into every reachable
    /// leaf that requires grad. Each node is visited once, in reverse
    /// topological order; intermediate gradients are dropped on return.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            log::warn!("backward called on a loss with no gradient path");
            return Err(TensorError::DisconnectedGraph);
        }
        let order = topo_order(self);
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => node.accumulate_grad(&g),
                Some(gf) => {
                    let input_grads = gf.op.backward(&gf.inputs, node, &g);
                    debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.op.name());
                    for (inp, ig) in gf.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), inp.numel(), "{}", gf.op.name());
                        match grads.get_mut(&inp.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                            None => {
                                grads.insert(inp.id(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Post-order over the grad-requiring subgraph rooted at `root`.
fn topo_order<T: Float>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(gf) = &t.0.grad_fn {
            for inp in gf.inputs.iter().rev() {
                if inp.requires_grad() && !seen.contains(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order
}
