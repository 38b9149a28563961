//! First-order meta-learning steps, generic over the objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Aggregation, MetaConfig, Variant};
use crate::autodiff::{sgd_step, GradSet, ParamSet};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::scalar::Scalar;

/// `inner_steps` full-batch gradient steps on the support set. Returns the
/// adapted parameters and the support loss seen before each step.
pub fn inner_adapt<S, O>(
    objective: &O,
    theta: &ParamSet<S>,
    support: &[O::Item],
    alpha: S,
    inner_steps: usize,
) -> Result<(ParamSet<S>, Vec<S>)>
where
    S: Scalar,
    O: Objective<S>,
{
    if support.is_empty() {
        return Err(Error::Config("inner_adapt: empty support set".into()));
    }
    let mut adapted = theta.clone();
    let mut losses = Vec::with_capacity(inner_steps);
    for _ in 0..inner_steps {
        let (loss, grads) = objective.loss_and_grad(&adapted, support)?;
        losses.push(loss);
        adapted = sgd_step(&adapted, &grads, alpha)?;
    }
    Ok((adapted, losses))
}

/// Gradient at the adapted parameters driving the meta update.
#[derive(Clone, Debug)]
pub struct TaskGradient<S> {
    pub grad: GradSet<S>,
    pub query_loss: S,
    pub domain_query_loss: Option<S>,
}

/// First-order meta-gradient: the gradient of the query loss at `theta'`
/// (for `hatemaml`, of `(1-w) L_Q + w L_Q'`) is used as is, without
/// differentiating through the inner step.
pub fn task_meta_grad<S, O>(
    objective: &O,
    theta_prime: &ParamSet<S>,
    query: &[O::Item],
    domain_query: Option<&[O::Item]>,
    variant: Variant,
    domain_weight: S,
) -> Result<TaskGradient<S>>
where
    S: Scalar,
    O: Objective<S>,
{
    if query.is_empty() {
        return Err(Error::Config("task_meta_grad: empty query set".into()));
    }
    let (query_loss, query_grad) = objective.loss_and_grad(theta_prime, query)?;
    if !variant.uses_domain_query() {
        return Ok(TaskGradient {
            grad: query_grad,
            query_loss,
            domain_query_loss: None,
        });
    }
    let domain_query = match domain_query {
        Some(d) if !d.is_empty() => d,
        _ => return Err(Error::Config("hatemaml requires a domain-query set".into())),
    };
    let (domain_loss, domain_grad) = objective.loss_and_grad(theta_prime, domain_query)?;
    let grad = query_grad
        .scaled(S::one() - domain_weight)
        .add(&domain_grad.scaled(domain_weight))?;
    Ok(TaskGradient {
        grad,
        query_loss,
        domain_query_loss: Some(domain_loss),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub support_loss: f64,
    pub query_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain_query_loss: Option<f64>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub tasks: Vec<TaskLog>,
    pub grad_norm: f64,
}

/// One outer-loop update. Tasks are adapted independently (in parallel)
/// from the same `theta`; their gradients are reduced in task order.
pub fn meta_step<S, O>(
    objective: &O,
    theta: &ParamSet<S>,
    tasks: &[Episode<O::Item>],
    config: &MetaConfig,
) -> Result<(ParamSet<S>, StepLog)>
where
    S: Scalar,
    O: Objective<S>,
    O::Item: Send,
{
    if tasks.is_empty() {
        return Err(Error::Config("meta_step: empty task batch".into()));
    }
    let alpha = S::of(config.alpha);
    let weight = S::of(config.domain_query_weight);
    let outcomes: Vec<Result<(TaskGradient<S>, S)>> = tasks
        .par_iter()
        .map(|task| {
            let (adapted, support_losses) =
                inner_adapt(objective, theta, &task.support, alpha, config.inner_steps)?;
            let domain = (!task.domain_query.is_empty()).then_some(task.domain_query.as_slice());
            let tg = task_meta_grad(
                objective,
                &adapted,
                &task.query,
                domain,
                config.variant,
                weight,
            )?;
            Ok((tg, support_losses[0]))
        })
        .collect();

    let mut total: Option<GradSet<S>> = None;
    let mut logs = Vec::with_capacity(tasks.len());
    for outcome in outcomes {
        let (tg, support_loss) = outcome?;
        logs.push(TaskLog {
            support_loss: support_loss.as_f64(),
            query_loss: tg.query_loss.as_f64(),
            domain_query_loss: tg.domain_query_loss.map(Scalar::as_f64),
        });
        match &mut total {
            None => total = Some(tg.grad),
            Some(acc) => acc.accumulate(&tg.grad)?,
        }
    }
    let mut total = total.expect("non-empty batch");
    if config.grad_aggregation == Aggregation::Mean {
        total = total.scaled(S::one() / S::from_usize(tasks.len()).unwrap());
    }
    let grad_norm = total.norm().as_f64();
    if !grad_norm.is_finite() {
        return Err(Error::Numeric("non-finite meta-gradient".into()));
    }
    let updated = sgd_step(theta, &total, S::of(config.beta))?;
    Ok((
        updated,
        StepLog {
            step: 0,
            tasks: logs,
            grad_norm,
        },
    ))
}
