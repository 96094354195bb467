//! Dense linear algebra, activations, reverse-mode gradients, Adam, and the
//! finite-difference gradient checker.

pub mod activations;
pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod real;
pub mod sparse;
pub mod store;
pub mod tape;

pub use activations::{sigmoid, softmax, softplus, tanh_act};
pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::Matrix;
pub use real::Real;
pub use sparse::SparseBipartite;
pub use store::ParamStore;
pub use tape::{NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("softmax of an empty vector")]
    EmptySoftmax,
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("backward already ran on this tape; record a new forward pass first")]
    TapeConsumed,
    #[error("loss node must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
}
