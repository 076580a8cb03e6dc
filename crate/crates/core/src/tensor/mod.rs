//! Dense tensors and the reverse-mode tape built on them.

pub mod gradcheck;
mod graph;
mod scalar;
#[allow(clippy::module_inception)]
mod tensor;

pub use graph::{transient_weights, Activation, Gradients, Graph, Mode, Var};

pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;
