//! Tensors, reverse-mode differentiation, random streams and the optimizer.

mod graph;
mod optim;
mod rng;
mod tensor;

pub use graph::{Graph, Var, PROB_FLOOR};
pub(crate) use graph::sq_dist;
pub use optim::{cosine_lr, SgdState};
pub use rng::RngState;
pub use tensor::Tensor;
