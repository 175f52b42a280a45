//! Dense `f64` tensors, reverse-mode differentiation and seeded randomness.

mod autograd;
mod gradcheck;
pub mod io;
mod rng;
mod tensor;

pub use autograd::{AttentionMask, Gradients, Graph, Var};
pub use gradcheck::{grad_check, GRAD_FLOOR};
pub use rng::{rand_normal, splitmix, Rng, RngState};
pub use tensor::Tensor;
