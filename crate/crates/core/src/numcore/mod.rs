//! Dense tensors, reverse-mode differentiation, random streams and Adam.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, max_relative_error, numeric_gradient};
pub use graph::{softmax_axis, Gradients, Graph, Param, ParamId, ParamSet, Var};
pub use rng::{gaussian, uniform, Rng, RngState};
pub use tensor::Tensor;
