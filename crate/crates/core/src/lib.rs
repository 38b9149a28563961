//! First-order meta-learning for cross-lingual text classification.

pub mod autodiff;
pub mod corpus;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod meta;
pub mod model;
pub mod objective;
pub mod rng;
pub mod scalar;
pub mod selftrain;
pub mod synth;
pub mod text;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type TensorF64 = autodiff::Tensor<f64>;
pub type TensorF32 = autodiff::Tensor<f32>;
pub type ParamSetF64 = autodiff::ParamSet<f64>;
pub type ParamSetF32 = autodiff::ParamSet<f32>;
pub type GradSetF64 = autodiff::GradSet<f64>;
pub type GradSetF32 = autodiff::GradSet<f32>;
