//! Classifier-level training entry points: base training, fine-tuning and
//! the episodic meta-training loop.

use serde::Serialize;

use super::config::{MetaConfig, Variant};
use super::supervised::{train_supervised, SupervisedConfig};
use super::trainer::{meta_step, StepLog};
use crate::autodiff::ParamSet;
use crate::corpus::{assemble_training_data, digest_samples, Corpus, Sample, Split, TrainingPool};
use crate::episodes::{build_episode_stream, task_batches, EpisodeConfig};
use crate::error::{Error, Result};
use crate::model::{digest_json, digest_params, ModelSpec, Provenance, TrainedModel};
use crate::rng::derive_seed;

/// Fine-tunes freshly initialized parameters on the source training set.
pub fn train_base(
    spec: &ModelSpec,
    init: ParamSet<f64>,
    source_train: &[Sample],
    config: &SupervisedConfig,
) -> Result<TrainedModel> {
    spec.validate()?;
    let clf = spec.classifier();
    clf.check_params(&init)?;
    if source_train.is_empty() {
        return Err(Error::MissingData("source training set is empty".into()));
    }
    let parent = digest_params(&init);
    let examples = spec.examples(source_train);
    let (params, _) = train_supervised(&clf, &init, &examples, config)?;
    Ok(TrainedModel {
        spec: spec.clone(),
        params,
        provenance: Provenance {
            variant: "base".into(),
            seed: config.seed,
            config_digest: digest_json(&(spec, config)),
            data_digest: digest_samples(source_train),
            parent: Some(parent),
        },
    })
}

/// Standard fine-tuning baseline starting from `base`.
pub fn finetune(
    base: &TrainedModel,
    pooled: &[Sample],
    config: &SupervisedConfig,
) -> Result<TrainedModel> {
    if pooled.is_empty() {
        return Err(Error::MissingData("fine-tuning set is empty".into()));
    }
    let clf = base.classifier();
    let examples = base.spec.examples(pooled);
    let (params, _) = train_supervised(&clf, &base.params, &examples, config)?;
    Ok(TrainedModel {
        spec: base.spec.clone(),
        params,
        provenance: Provenance {
            variant: Variant::Finetune.to_string(),
            seed: config.seed,
            config_digest: digest_json(config),
            data_digest: digest_samples(pooled),
            parent: Some(base.params_digest()),
        },
    })
}

#[derive(Clone, Debug)]
pub struct MetaTrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<StepLog>,
}

/// Episodic first-order meta-training from `base` on the pooled data `D`.
///
/// Episode streams are rebuilt with a fresh permutation each time one is
/// exhausted, until `max_meta_steps` outer updates have been applied or
/// `max_epochs` streams have been consumed.
/// `domain_pool` feeds the domain-query sets and is required for
/// `hatemaml`; other variants ignore it.
pub fn meta_train(
    base: &TrainedModel,
    data: &[Sample],
    domain_pool: Option<&[Sample]>,
    meta: &MetaConfig,
    episodes: &EpisodeConfig,
) -> Result<MetaTrainOutcome> {
    meta.validate()?;
    episodes.validate()?;
    if meta.variant == Variant::Finetune {
        return Err(Error::Config(
            "variant `finetune` is not episodic; use finetune()".into(),
        ));
    }
    let domain_pool = match (meta.variant.uses_domain_query(), domain_pool) {
        (true, Some(pool)) if !pool.is_empty() => Some(pool),
        (true, _) => {
            return Err(Error::Config(
                "hatemaml requires a non-empty domain-query pool".into(),
            ))
        }
        (false, _) => None,
    };
    if data.iter().any(|s| s.split == Split::Test) {
        return Err(Error::Config(
            "test-split samples must not be used for meta-training".into(),
        ));
    }

    let clf = base.classifier();
    let examples = base.spec.examples(data);
    let pool_examples = domain_pool.map(|p| base.spec.examples(p));

    #[derive(Serialize)]
    struct Digested<'a> {
        meta: &'a MetaConfig,
        episodes: &'a EpisodeConfig,
    }
    let provenance = Provenance {
        variant: meta.variant.to_string(),
        seed: meta.seed,
        config_digest: digest_json(&Digested { meta, episodes }),
        data_digest: digest_samples(data),
        parent: Some(base.params_digest()),
    };

    let mut theta = base.params.clone();
    let mut log = Vec::with_capacity(meta.max_meta_steps);
    let mut epoch = 0u64;
    'outer: while log.len() < meta.max_meta_steps
        && meta.max_epochs.is_none_or(|e| epoch < e as u64)
    {
        let stream_cfg = EpisodeConfig {
            seed: derive_seed(episodes.seed ^ meta.seed, &format!("stream/{epoch}")),
            ..*episodes
        };
        let stream = build_episode_stream(&examples, pool_examples.as_deref(), &stream_cfg)?;
        for batch in task_batches(&stream, meta.tasks_per_batch)? {
            let (next, mut entry) = meta_step(&clf, &theta, batch, meta)?;
            entry.step = log.len();
            theta = next;
            log.push(entry);
            if log.len() >= meta.max_meta_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }

    Ok(MetaTrainOutcome {
        model: TrainedModel {
            spec: base.spec.clone(),
            params: theta,
            provenance,
        },
        log,
    })
}

/// The full meta-learning procedure: starts from the base model, assembles
/// `D` for the training choice and runs episodic meta-training.
pub fn run_algorithm1(
    base: &TrainedModel,
    corpus: &Corpus,
    source: &str,
    aux_or_target: &str,
    meta: &MetaConfig,
    episodes: &EpisodeConfig,
) -> Result<MetaTrainOutcome> {
    let pool = assemble_training_data(corpus, meta.training_choice, source, aux_or_target)?;
    meta_train_on_pool(base, &pool, meta, episodes)
}

/// Meta-training on an already assembled pool.
///
/// * `hatemaml` / `maml`: episodes over all of `D`; `hatemaml` draws
///   domain queries from the pool's domain language.
/// * `xmaml`: episodes come from the domain language only, without
///   domain queries.
pub fn meta_train_on_pool(
    base: &TrainedModel,
    pool: &TrainingPool,
    meta: &MetaConfig,
    episodes: &EpisodeConfig,
) -> Result<MetaTrainOutcome> {
    match meta.variant {
        Variant::Hatemaml => {
            let domain = pool.domain_pool();
            meta_train(base, &pool.samples, Some(&domain), meta, episodes)
        }
        Variant::Maml => meta_train(base, &pool.samples, None, meta, episodes),
        Variant::Xmaml => {
            let only = pool.domain_pool();
            meta_train(base, &only, None, meta, episodes)
        }
        Variant::Finetune => Err(Error::Config(
            "variant `finetune` is not episodic; use finetune()".into(),
        )),
    }
}
