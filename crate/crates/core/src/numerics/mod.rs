//! Dense `f64` arithmetic, reverse-mode differentiation and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
pub mod jet;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, StepOutcome};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use tensor::Tensor;
