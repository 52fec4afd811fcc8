//! Minimal CPU neural-network toolkit: a define-by-run autodiff graph over
//! `f64` tensors, convolution and dense layers, and Adam.

mod gemm;
pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{sigmoid, softplus, ConvSpec, Graph, Var};
pub use layers::{Conv2d, Linear};
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed parameter data: {0}")]
    Format(String),
}
