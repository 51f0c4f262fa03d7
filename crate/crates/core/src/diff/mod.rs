//! Tensors and reverse-mode gradients.

mod check;
mod graph;
mod kernels;
mod tensor;

pub use check::{check_gradients, gradient_check, relative_error, GradCheck, FD_STEP, REL_FLOOR};
pub use graph::{Graph, Var, COSINE_EPS};
pub use tensor::Tensor;
