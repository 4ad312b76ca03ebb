//! Dense CPU tensors with tape-based reverse-mode differentiation.
//!
//! The operation set is the one needed by volumetric CNN-attention models:
//! broadcasting arithmetic, batched matrix products, axis permutations, 3D
//! convolution, group/layer normalization, softmax, and pooling reductions.
//! All kernels are single-threaded with a fixed summation order, so results
//! are bit-reproducible run to run.

mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod params;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BinOp, Conv3dGeometry, Gradients, Graph, Reduction, Var};
pub use params::{cast_store, parameter_count, Adam, AdamConfig, ParamStore};
pub use tensor::{strides_of, Real, Tensor};
