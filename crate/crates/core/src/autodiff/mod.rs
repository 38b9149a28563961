//! Minimal reverse-mode differentiation over dense tensors.

mod check;
mod graph;
mod io;
mod params;
mod tensor;

pub use check::{compare_gradients, finite_diff, GradientDiscrepancy};
pub use graph::{evaluate, grad, Graph, SparseRows, Var};
pub use io::{params_from_str, params_to_string};
pub use params::{sgd_step, GradSet, ParamSet, ShapeView};
pub use tensor::Tensor;
