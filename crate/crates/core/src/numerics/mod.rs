//! Dense tensors, reverse-mode autodiff, Adam, and the deterministic
//! RNG that everything else seeds from.

mod adam;
mod graph;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{gelu_scalar, Gradients, Graph, Var};
pub use rng::Rng;
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};
