//! Dense arrays, reverse-mode differentiation, Adam, and the
//! finite-difference oracle the rest of the crate is checked against.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{
    compare_gradients, compare_gradients_sampled, gradient_check, gradient_check_sampled, GradCheckReport,
};
pub use graph::{layer_norm, masked_softmax, sigmoid, Graph, Var};
pub use params::{adam_step, AdamHyper, Gradients, ParameterStore};
pub(crate) use tensor::gemm;
pub use tensor::Tensor;

/// Epsilon used by every layer normalisation in the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;
