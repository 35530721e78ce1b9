//! Dense `f64` tensors, a dynamic tape with reverse-mode gradients, and Adam.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::finite_diff_gradcheck;
pub use graph::{Gradients, Graph, Var};
pub use params::{FlatParam, Param, ParamStore};
pub use tensor::Tensor;
