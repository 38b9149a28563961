use crate::autodiff::{GradSet, ParamSet};
use crate::error::Result;
use crate::scalar::Scalar;

/// A differentiable mean loss over a batch of items.
///
/// The trainers only ever see parameters through this trait, so the same
/// meta-learning code drives the text classifier and small analytic test
/// objectives alike.
pub trait Objective<S: Scalar>: Sync {
    type Item: Sync;

    fn loss_and_grad(&self, params: &ParamSet<S>, batch: &[Self::Item]) -> Result<(S, GradSet<S>)>;
}

/// Items carrying a stable identifier (used for set disjointness).
pub trait Identified {
    fn id(&self) -> &str;
}
