//! Dense tensors, reverse-mode differentiation, optimizers and seeded randomness.

mod float;
pub mod gradcheck;
mod graph;
mod optim;
mod rng;
mod tensor;

pub use float::{DType, Float};
pub use graph::{Bindings, Gradients, Graph, Padding, Var};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use rng::{seeded_rng, RngStream};
pub use tensor::{ParameterSet, Tensor};
