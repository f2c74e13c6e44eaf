//! Slice-level forward and backward kernels used by the graph ops.

pub mod broadcast;
pub mod conv;
pub mod matmul;
pub mod norm;
