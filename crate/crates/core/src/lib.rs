pub mod audio;
pub mod codec;
pub mod corpus;
pub mod diffusion;
pub mod dit;
pub mod error;
pub mod evaluate;
pub mod long_video;
pub mod metrics;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Graph, Rng, Tensor, Var};
