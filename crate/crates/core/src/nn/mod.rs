//! Minimal differentiable-computation substrate.
//!
//! Dense row-major tensors, a tape-based reverse-mode [`Graph`], the layers
//! the correction model is assembled from, losses, optimizers, and a
//! central-difference gradient checker.

mod gradcheck;
mod graph;
pub mod init;
pub mod kernels;
mod layers;
mod loss;
mod optim;
mod params;
mod real;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, Var};
pub use layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};
pub use loss::{cross_entropy_from_probs, focal_loss_from_probs, FocalWeights, PROB_FLOOR};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
