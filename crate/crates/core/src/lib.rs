mod cell;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
mod fastmath;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod variational;

pub use error::{Error, Result};
pub use tape::{EwiseKind, GradTape, Gradients, ParamId, Var};
pub use tensor::Tensor;
