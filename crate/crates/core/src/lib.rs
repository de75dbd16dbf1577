//! Decoupled self-supervised node representation learning.
//!
//! The crate contains a small dense/sparse tensor library with reverse-mode
//! autodiff, graph storage and metrics, the DSSL model and objective, the
//! training loop, a graph auto-encoder baseline and evaluation protocols.

pub mod autograd;
pub mod checkpoint;
pub mod eval;
pub mod gae;
pub mod graph;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use autograd::{concat_cols, concat_rows, finite_diff_check, Gradients, Tape, Var};
pub use graph::{Graph, GraphError};
pub use tensor::{SparseMatrix, Tensor, TensorError};
