use serde::{Deserialize, Serialize};

use crate::corpus::TrainingChoice;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// First-order MAML on the pooled data, query loss only.
    Maml,
    /// MAML plus the virtual domain-query loss.
    Hatemaml,
    /// MAML restricted to a single auxiliary language.
    Xmaml,
    /// Plain mini-batch fine-tuning baseline.
    Finetune,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Maml => "maml",
            Variant::Hatemaml => "hatemaml",
            Variant::Xmaml => "xmaml",
            Variant::Finetune => "finetune",
        }
    }

    pub fn uses_domain_query(self) -> bool {
        self == Variant::Hatemaml
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Inner (fast) learning rate.
    pub alpha: f64,
    /// Meta learning rate.
    pub beta: f64,
    pub inner_steps: usize,
    pub tasks_per_batch: usize,
    pub max_meta_steps: usize,
    /// Optional cap on passes over the episode stream; training stops at
    /// whichever of this and `max_meta_steps` is reached first.
    pub max_epochs: Option<usize>,
    pub variant: Variant,
    pub training_choice: TrainingChoice,
    pub grad_aggregation: Aggregation,
    /// Weight of the domain-query loss; the query loss gets `1 - w`.
    pub domain_query_weight: f64,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            beta: 1e-3,
            inner_steps: 1,
            tasks_per_batch: 4,
            max_meta_steps: 100,
            max_epochs: None,
            variant: Variant::Hatemaml,
            training_choice: TrainingChoice::ZeroShot,
            grad_aggregation: Aggregation::Sum,
            domain_query_weight: 0.5,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            problems.push(format!("meta.alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            problems.push(format!("meta.beta must be >= 0, got {}", self.beta));
        }
        if self.inner_steps == 0 {
            problems.push("meta.inner_steps must be >= 1".to_string());
        }
        if self.tasks_per_batch == 0 {
            problems.push("meta.tasks_per_batch must be >= 1".to_string());
        }
        if self.max_epochs == Some(0) {
            problems.push("meta.max_epochs must be >= 1 when set".to_string());
        }
        if !(0.0..=1.0).contains(&self.domain_query_weight) {
            problems.push("meta.domain_query_weight must lie in [0, 1]".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
