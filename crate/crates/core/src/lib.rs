//! Variational inference for neural networks that learn their own layer
//! widths and depth alongside their weights, with relaxed categorical and
//! Bernoulli architecture variables, plus the experiment harness and bandit
//! suite built on top.

pub mod bandit;
pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod layers;
pub mod math;
pub mod predictive;
pub mod rng;
pub mod tape;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{grad_check, grad_check_multi, GradCheckReport, Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Code version embedded in every output artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
