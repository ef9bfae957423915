//! Dense `f64` tensors and reverse-mode differentiation.

pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use params::ParamStore;
pub use tensor::{
    log_softmax, mish, mish_grad_scalar, mish_scalar, sigmoid_scalar, softmax, softplus,
    softplus_scalar, Tensor,
};
