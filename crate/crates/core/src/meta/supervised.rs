//! Mini-batch gradient descent, used for base training and fine-tuning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_step, ParamSet};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::rng_for;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "training.lr must be >= 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Seeded-shuffle mini-batch SGD on the objective's mean loss. Returns the
/// final parameters and the mean training loss of each epoch.
pub fn train_supervised<S, O>(
    objective: &O,
    init: &ParamSet<S>,
    data: &[O::Item],
    config: &SupervisedConfig,
) -> Result<(ParamSet<S>, Vec<f64>)>
where
    S: Scalar,
    O: Objective<S>,
    O::Item: Clone,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::MissingData("training set is empty".into()));
    }
    let lr = S::of(config.lr);
    let mut params = init.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_for(config.seed, &format!("sgd/epoch/{epoch}")));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<O::Item> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads) = objective.loss_and_grad(&params, &batch)?;
            params = sgd_step(&params, &grads, lr)?;
            total += loss.as_f64();
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok((params, epoch_losses))
}
