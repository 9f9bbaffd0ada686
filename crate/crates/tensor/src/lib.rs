//! CPU tensors and a define-by-run reverse-mode tape, sized for training
//! small convolutional encoder/decoder networks with a batch of one.
//!
//! Feature maps are `[channels, height, width]`. Every op on [`Graph`]
//! evaluates eagerly; [`Graph::backward`] replays the tape in reverse and
//! returns gradients for the leaves created with [`Graph::param`].

mod gemm;
mod graph;
pub mod ops;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::conv::{conv2d_forward, conv_transpose2d_forward, conv_transpose_out};
pub use ops::elementwise::{sigmoid, softplus};
pub use ops::norm::group_norm_forward;
pub use ops::roi::{Roi, RoiAlignParams};
pub use tensor::Tensor;
