//! Tape-based reverse-mode differentiation for the small convolutional and attention networks
//! used by the enhancement pipeline. Single-threaded and deterministic: identical inputs give
//! bit-identical values and gradients.

pub mod gradcheck;
mod graph;
mod ops;
mod params;
mod scalar;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use ops::attention::channel_attention_maps;
pub use params::{ParamId, ParamStore, Scope};
pub use scalar::{gemm, Float};
pub use tensor::Tensor;
