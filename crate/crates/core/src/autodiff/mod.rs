//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{backward, Graph, OpKind, Var};
pub use optim::Sgd;
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tensor::Tensor;
