//! Self-organized operational neural networks (Self-ONNs) for binary
//! fundus-image classification.
//!
//! The crate covers the whole experiment loop: tensor kernels, generative
//! convolution layers with exact manual backpropagation, Adam training with
//! a shallow stopping rule, stratified k-fold cross-validation, the metric
//! suite, and parameter/MAC accounting for the reference architecture.

// `!(a > b)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crossval;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{Gradients, Network, NetworkConfig, Trace};
pub use tensor::{Padding, Tensor};
