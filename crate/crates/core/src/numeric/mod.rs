//! Dense tensors and reverse-mode gradients.

mod graph;
mod params;
mod tensor;

pub use graph::{conv2d, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
