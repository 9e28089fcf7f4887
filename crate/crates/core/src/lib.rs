//! Lightweight and dynamic convolutions, multi-head attention, and the
//! encoder-decoder models built from them, on a small tape-based autodiff
//! engine over `f64` tensors.

pub mod ablation;
pub mod attention;
pub mod bench;
pub mod checks;
pub mod conv;
pub mod dynamic;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kv;
mod linalg;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use rng::Rng;
pub use tensor::Tensor;
