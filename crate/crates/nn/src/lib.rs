//! Minimal reverse-mode automatic differentiation over dense tensors, with
//! the layers, optimizer and serialization needed to train small
//! convolutional and attention models on CPU.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Mode, Var};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::{gemm, Scalar};
pub use tensor::{numel, Tensor};
