//! Minimal multilayer-perceptron engine.
//!
//! Everything runs in `f64`. Parameters of a network live in a single flat
//! [`ParamVector`] laid out layer by layer, weights before biases, with each
//! weight matrix stored row-major as `(fan_out, fan_in)`. That layout is what
//! the multi-step policy update and the checkpoint format operate on.

mod adam;
pub mod fragment;
mod gemm;
mod mlp;
mod params;

pub use adam::{AdamState, Direction, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use mlp::{Activation, Mlp, MlpSpec, Tape};
pub use params::{polyak_update, ParamVector};
