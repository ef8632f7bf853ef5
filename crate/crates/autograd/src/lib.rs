//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as operations execute; a single
//! [`Tape::backward`] sweep then fills in gradients. The operation set is
//! deliberately small: exactly what an attention-branch captioning network
//! needs (convolutions, affine maps, gates, pooling, concatenation and a
//! softmax cross-entropy head).

mod adam;
mod error;
mod gemm;
pub mod gradcheck;
mod lstm;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{AutogradError, Result};
pub use lstm::lstm_cell;
pub use ops::stable_sigmoid;
pub use params::{Binding, Gradients, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::{argmax, log_softmax, softmax, Tensor};
