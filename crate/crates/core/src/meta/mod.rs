//! Meta-learning: inner adaptation, first-order meta updates, the
//! episode-driven training loop and the supervised baselines.

mod algorithm;
mod config;
mod supervised;
mod trainer;

pub use algorithm::*;
pub use config::{Aggregation, MetaConfig, Variant};
pub use supervised::{train_supervised, SupervisedConfig};
pub use trainer::{inner_adapt, meta_step, task_meta_grad, StepLog, TaskGradient, TaskLog};
