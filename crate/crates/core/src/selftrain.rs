//! Silver-label self-training: predict on unlabeled target text, keep
//! confident and class-balanced predictions, meta-train on them and repeat
//! from the new model.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::corpus::{PoolSpec, Role, Sample, Split, TrainingChoice, TrainingPool, UnlabeledText};
use crate::episodes::EpisodeConfig;
use crate::error::{Error, Result};
use crate::meta::{meta_train_on_pool, MetaConfig, StepLog};
use crate::model::{digest_json, TrainedModel};
use crate::rng::{derive_seed, rng_for};
use crate::text::Prediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    /// Minimum prediction confidence for a silver label.
    pub threshold: f64,
    /// Maximum silver-set size per iteration.
    pub cap: usize,
    pub iterations: usize,
    /// Pool the source validation set with the silver labels.
    pub include_source_gold: bool,
    pub meta: MetaConfig,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            cap: 300,
            iterations: 5,
            include_source_gold: true,
            meta: MetaConfig {
                training_choice: TrainingChoice::FewShot,
                ..MetaConfig::default()
            },
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.threshold > 0.5 && self.threshold <= 1.0) {
            problems.push(format!(
                "self_train.threshold must lie in (0.5, 1], got {}",
                self.threshold
            ));
        }
        if self.iterations == 0 {
            problems.push("self_train.iterations must be >= 1".to_string());
        }
        if self.cap < 2 {
            problems.push(format!("self_train.cap must be >= 2, got {}", self.cap));
        }
        if let Err(e) = self.meta.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Model-labeled target samples that passed the confidence filter.
#[derive(Clone, Debug, PartialEq)]
pub struct SilverSet {
    /// Samples whose `label` is the predicted class.
    pub samples: Vec<Sample>,
    pub confidences: Vec<f64>,
    pub iteration: usize,
}

impl SilverSet {
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for s in &self.samples {
            counts[usize::from(s.label)] += 1;
        }
        counts
    }
}

/// What one silver-label round saw and kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilverAudit {
    pub iteration: usize,
    /// Parameter digest of the model that produced the predictions.
    pub predictor_digest: String,
    pub pool_size: usize,
    /// Survivors of the threshold per predicted class.
    pub survivors: [usize; 2],
    pub kept: [usize; 2],
    pub kept_ids: Vec<String>,
    /// Predicted (silver) label of each kept sample.
    pub kept_labels: Vec<u8>,
    /// Counts of all pool confidences in ten equal bins over [0.5, 1].
    pub confidence_deciles: [usize; 10],
    /// Size of the meta-training data: silver plus any source gold.
    pub training_size: usize,
    /// Parameter digest of the model produced by this iteration.
    pub result_digest: Option<String>,
}

fn decile_histogram(confidences: &[f64]) -> [usize; 10] {
    let mut bins = [0; 10];
    for &c in confidences {
        let b = (((c - 0.5) / 0.05).floor().max(0.0) as usize).min(9);
        bins[b] += 1;
    }
    bins
}

/// Seeded choice of `k` of `items`, returned in original order.
fn choose(items: &[usize], k: usize, seed: u64, purpose: &str) -> Vec<usize> {
    if k >= items.len() {
        return items.to_vec();
    }
    let mut rng = rng_for(seed, purpose);
    let mut picked: Vec<usize> = sample_indices(&mut rng, items.len(), k)
        .into_iter()
        .map(|j| items[j])
        .collect();
    picked.sort_unstable();
    picked
}

/// Indices of the silver samples in pool order, plus per-class threshold
/// survivor counts.
pub fn select_silver(
    predictions: &[Prediction],
    threshold: f64,
    cap: usize,
    seed: u64,
) -> Result<(Vec<usize>, [usize; 2])> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, p) in predictions.iter().enumerate() {
        if p.confidence >= threshold {
            by_class[p.label].push(i);
        }
    }
    let survivors = [by_class[0].len(), by_class[1].len()];
    let minority = survivors[0].min(survivors[1]);
    if minority == 0 {
        return Err(Error::ThresholdTooStrict {
            class0: survivors[0],
            class1: survivors[1],
        });
    }
    let per_class_cap = [cap / 2, cap - cap / 2];
    let mut kept = Vec::new();
    for c in 0..2 {
        let balanced = choose(&by_class[c], minority, seed, &format!("balance/{c}"));
        kept.extend(choose(
            &balanced,
            per_class_cap[c],
            seed,
            &format!("cap/{c}"),
        ));
    }
    kept.sort_unstable();
    Ok((kept, survivors))
}

/// Predicts on the whole pool, keeps confidence >= threshold, down-samples
/// the majority predicted class to the minority count and then draws down
/// to `cap` (split evenly between classes, the odd one going to class 1).
pub fn generate_silver(
    model: &TrainedModel,
    pool: &[UnlabeledText],
    config: &SelfTrainConfig,
    iteration: usize,
    seed: u64,
) -> Result<(SilverSet, SilverAudit)> {
    if pool.is_empty() {
        return Err(Error::MissingData("unlabeled pool is empty".into()));
    }
    let predictions = model.predict_texts(pool.iter().map(|u| u.text.as_str()))?;
    let confidences: Vec<f64> = predictions.iter().map(|p| p.confidence).collect();

    let round_seed = derive_seed(seed, &format!("silver/{iteration}"));
    let (kept_idx, survivors) =
        select_silver(&predictions, config.threshold, config.cap, round_seed)?;

    let samples: Vec<Sample> = kept_idx
        .iter()
        .map(|&i| Sample {
            id: pool[i].id.clone(),
            text: pool[i].text.clone(),
            label: predictions[i].label as u8,
            language: pool[i].language.clone(),
            split: Split::Train,
        })
        .collect();
    let silver = SilverSet {
        confidences: kept_idx.iter().map(|&i| confidences[i]).collect(),
        samples,
        iteration,
    };
    let audit = SilverAudit {
        iteration,
        predictor_digest: model.params_digest(),
        pool_size: pool.len(),
        survivors,
        kept: silver.class_counts(),
        kept_ids: silver.samples.iter().map(|s| s.id.clone()).collect(),
        kept_labels: silver.samples.iter().map(|s| s.label).collect(),
        confidence_deciles: decile_histogram(&confidences),
        training_size: 0,
        result_digest: None,
    };
    Ok((silver, audit))
}

#[derive(Clone, Debug)]
pub struct SelfTrainOutcome {
    pub model: TrainedModel,
    pub audits: Vec<SilverAudit>,
    pub logs: Vec<Vec<StepLog>>,
}

pub fn audits_to_jsonl(audits: &[SilverAudit]) -> String {
    let mut out = String::new();
    for a in audits {
        out.push_str(&serde_json::to_string(a).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Iterated silver labeling and few-shot meta-training. Each iteration's
/// model is the predictor for the next; the silver set is redrawn fresh
/// every round. The pool carries no labels.
pub fn self_train_loop(
    base: &TrainedModel,
    pool: &[UnlabeledText],
    source_validation: &[Sample],
    config: &SelfTrainConfig,
    episodes: &EpisodeConfig,
) -> Result<SelfTrainOutcome> {
    config.validate()?;
    episodes.validate()?;
    if pool.is_empty() {
        return Err(Error::MissingData("unlabeled target pool is empty".into()));
    }
    if config.include_source_gold && source_validation.is_empty() {
        return Err(Error::MissingData("source validation set is empty".into()));
    }
    let target = pool[0].language.clone();
    let source = source_validation.first().map(|s| s.language.clone());

    let mut current = base.clone();
    let mut audits = Vec::with_capacity(config.iterations);
    let mut logs = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let (silver, mut audit) =
            generate_silver(&current, pool, config, iteration, config.meta.seed).map_err(|e| {
                Error::SelfTrainAborted {
                    completed: iteration,
                    source: Box::new(e),
                }
            })?;

        let mut samples = Vec::new();
        let mut pools = Vec::new();
        if config.include_source_gold {
            samples.extend(source_validation.iter().cloned());
            pools.push(PoolSpec::for_role(
                Role::Source,
                source.as_deref().unwrap_or_default(),
            ));
        }
        samples.extend(silver.samples);
        pools.push(PoolSpec::for_role(Role::Target, &target));
        audit.training_size = samples.len();
        let training = TrainingPool {
            samples,
            pools,
            domain_language: target.clone(),
        };

        let meta = MetaConfig {
            training_choice: TrainingChoice::FewShot,
            seed: derive_seed(config.meta.seed, &format!("self-train/{iteration}")),
            ..config.meta.clone()
        };
        let outcome = meta_train_on_pool(&current, &training, &meta, episodes).map_err(|e| {
            Error::SelfTrainAborted {
                completed: iteration,
                source: Box::new(e),
            }
        })?;
        current = outcome.model;
        current.provenance.variant = "self-train".into();
        current.provenance.config_digest = digest_json(&(config, episodes, iteration));
        audit.result_digest = Some(current.params_digest());
        log::info!(
            "self-train iteration {iteration}: survivors {:?}, kept {:?}",
            audit.survivors,
            audit.kept
        );
        audits.push(audit);
        logs.push(outcome.log);
    }
    Ok(SelfTrainOutcome {
        model: current,
        audits,
        logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(class1: usize, class0: usize, confidence: f64) -> Vec<Prediction> {
        (0..class1)
            .map(|_| Prediction {
                label: 1,
                confidence,
            })
            .chain((0..class0).map(|_| Prediction {
                label: 0,
                confidence,
            }))
            .collect()
    }

    fn counts(p: &[Prediction], kept: &[usize]) -> [usize; 2] {
        let mut c = [0; 2];
        for &i in kept {
            c[p[i].label] += 1;
        }
        c
    }

    #[test]
    fn balancing_limits_to_the_minority() {
        let p = preds(400, 100, 0.9);
        let (kept, survivors) = select_silver(&p, 0.7, 300, 1).unwrap();
        assert_eq!(survivors, [100, 400]);
        assert_eq!(counts(&p, &kept), [100, 100]);
    }

    #[test]
    fn cap_applies_after_balancing() {
        let p = preds(250, 250, 0.9);
        let (kept, _) = select_silver(&p, 0.7, 300, 1).unwrap();
        assert_eq!(counts(&p, &kept), [150, 150]);
        let (odd, _) = select_silver(&p, 0.7, 301, 1).unwrap();
        assert_eq!(odd.len(), 301);
    }

    #[test]
    fn impossible_threshold_is_reported() {
        let p = preds(10, 10, 0.99);
        let err = select_silver(&p, 1.01, 300, 1).unwrap_err();
        assert!(matches!(
            err,
            Error::ThresholdTooStrict {
                class0: 0,
                class1: 0
            }
        ));
        assert!(err.to_string().contains("threshold too strict"));
        // one class wiped out also leaves nothing to balance against
        let mut q = preds(10, 0, 0.99);
        q.extend(preds(0, 10, 0.6));
        assert!(select_silver(&q, 0.7, 300, 1).is_err());
    }

    #[test]
    fn low_confidence_is_dropped_and_selection_is_seeded() {
        let mut p = preds(50, 50, 0.95);
        p.extend(preds(50, 50, 0.65));
        let (a, survivors) = select_silver(&p, 0.7, 60, 3).unwrap();
        assert_eq!(survivors, [50, 50]);
        assert!(a.iter().all(|&i| p[i].confidence >= 0.7));
        assert_eq!(select_silver(&p, 0.7, 60, 3).unwrap().0, a);
        assert_ne!(select_silver(&p, 0.7, 60, 4).unwrap().0, a);
    }

    #[test]
    fn config_validation() {
        assert!(SelfTrainConfig::default().validate().is_ok());
        for bad in [
            SelfTrainConfig {
                threshold: 0.5,
                ..Default::default()
            },
            SelfTrainConfig {
                threshold: 1.2,
                ..Default::default()
            },
            SelfTrainConfig {
                iterations: 0,
                ..Default::default()
            },
            SelfTrainConfig {
                cap: 1,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn deciles_cover_the_confidence_range() {
        assert_eq!(
            decile_histogram(&[0.5, 0.549, 0.55, 1.0]),
            [2, 1, 0, 0, 0, 0, 0, 0, 0, 1]
        );
    }

    proptest::proptest! {
        #[test]
        fn silver_invariants(
            labels in proptest::collection::vec((0usize..2, 0.5f64..1.0), 1..400),
            cap in 2usize..120,
            seed in 0u64..1000,
        ) {
            let p: Vec<Prediction> = labels.iter().map(|&(label, confidence)| Prediction { label, confidence }).collect();
            if let Ok((kept, _)) = select_silver(&p, 0.7, cap, seed) {
                let c = counts(&p, &kept);
                proptest::prop_assert!(kept.len() <= cap);
                proptest::prop_assert!(c[0].abs_diff(c[1]) <= 1);
                proptest::prop_assert!(kept.iter().all(|&i| p[i].confidence >= 0.7));
            }
        }
    }
}
