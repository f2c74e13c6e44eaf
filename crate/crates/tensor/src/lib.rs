//! Deterministic dense tensors and a tape-based reverse-mode autodiff engine
//! covering the kernels of convolutional encoder/decoder and transformer
//! models: batched matmul, 2-D (transposed) convolution, group and layer
//! normalization, softmax, smooth activations and layout ops.
//!
//! All reductions run in a fixed order. With the `parallel` feature, batch
//! entries are processed on the rayon pool, but partial results are still
//! combined in index order, so outputs do not depend on the thread count.

mod error;
mod float;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod par;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use float::{gemm, DType, Float, MatRef};
pub use graph::{permute_data, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::{numel, Tensor};
