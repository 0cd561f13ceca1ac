//! Generalized zero-shot learning with an attribute-guided two-step dense
//! attention embedding network trained jointly with a conditional
//! adversarial feature generator.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the `f64` instantiation used by training, checkpoints
//! and the command line.

pub mod afgn;
pub mod agan;
pub mod data;
pub mod error;
pub mod eval;
pub mod numcore;
pub mod pmi;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision of the trainer and the CLI.
pub type Real = f64;

pub type TensorF32 = numcore::Tensor<f32>;
pub type TensorF64 = numcore::Tensor<f64>;
pub type GraphF64 = numcore::Graph<f64>;
pub type ParamSetF64 = numcore::ParamSet<f64>;
