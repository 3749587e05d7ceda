//! Dense tensors and a define-by-run reverse-mode tape.
//!
//! The engine covers exactly the kernels the AU detection network needs:
//! matrix products, 2-D convolution, pooling, batch normalisation, the usual
//! activations, reshaping/concatenation/gather and reductions. Generic over
//! `f32` (training) and `f64` (gradient checking).

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod scalar;
pub mod suite;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{gelu, sigmoid, BatchStats, Graph, NormMode, Var};
pub use scalar::{DType, Scalar};
pub use tensor::{numel, Tensor};
