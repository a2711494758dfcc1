//! Dense CPU tensors with a tape-free, reference-counted reverse-mode autodiff graph.
//!
//! Gradients are computed by [`Var::backward`] or [`grad`]; passing
//! `create_graph = true` to [`grad`] keeps the gradient computation differentiable,
//! which is what gradient penalties need.

mod ops;
mod real;
mod tensor;
mod var;

pub mod gradcheck;

pub use real::{gemm, MatRef, Real};
pub use tensor::{broadcast_shape, contiguous_strides, numel, ConvGeom, Tensor};
pub use var::{grad, grad_enabled, no_grad, BackwardFn, Gradients, Var};
