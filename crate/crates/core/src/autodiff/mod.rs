//! Dense reverse-mode automatic differentiation and the Adam optimizer.
//!
//! The primitive set is deliberately small: it covers exactly what the
//! convolutional encoder/decoder pairs and their losses need.

mod adam;
mod conv;
mod params;
mod real;
mod tape;
mod tensor;

pub use conv::{conv_out_extent, conv_transpose_out_extent};
pub use adam::{AdamConfig, AdamState};
pub use params::{Bound, ModelParams, ParamEntry};
pub use real::Real;
pub use tape::{Activation, Gradients, Tape, Var, BERNOULLI_CLAMP};
pub use tensor::Tensor;
