//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] sweeps it
//! once in reverse. Only scalar↔tensor and equal-shape broadcasting exist.
//! Gradients are first order only.

pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use params::{sgd_step, ParamSet, ParamVars};
pub use tape::{softmax_slice as softmax, Elementwise, Gradients, Tape, Var};
pub use tensor::{argmax, Real, Tensor};

/// Batch-norm epsilon used throughout.
pub const BN_EPS: f64 = 1e-5;
