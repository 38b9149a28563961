//! Config-driven experiments: zero-shot transfer, domain adaptation on a
//! subset of languages, and full multilingual training.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    cap, Corpus, Format, PoolSpec, Role, Sample, Split, TrainingChoice, TrainingPool,
};
use crate::episodes::EpisodeConfig;
use crate::error::{Error, Result};
use crate::eval::{macro_f1, run_multi_seed, EvalReport, MetricRecord};
use crate::meta::{
    finetune, meta_train, run_algorithm1, train_base, MetaConfig, SupervisedConfig, Variant,
};
use crate::model::{ModelSpec, TrainedModel};
use crate::rng::derive_seed;
use crate::selftrain::{self_train_loop, SelfTrainConfig, SelfTrainOutcome, SilverAudit};
use crate::synth::{gen_family, FamilySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Base model on the source only, adapted without target labels.
    ZeroShot,
    /// Train on a subset of languages, evaluate on all of them.
    DomainAdaptation,
    /// Train and evaluate on every language.
    Full,
}

/// What is trained on top of the source-language base model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunVariant {
    Base,
    Finetune,
    Maml,
    Hatemaml,
    Xmaml,
    SelfTrain,
}

impl RunVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            RunVariant::Base => "base",
            RunVariant::Finetune => "finetune",
            RunVariant::Maml => "maml",
            RunVariant::Hatemaml => "hatemaml",
            RunVariant::Xmaml => "xmaml",
            RunVariant::SelfTrain => "self_train",
        }
    }

    fn meta_variant(self) -> Option<Variant> {
        match self {
            RunVariant::Maml => Some(Variant::Maml),
            RunVariant::Hatemaml | RunVariant::SelfTrain => Some(Variant::Hatemaml),
            RunVariant::Xmaml => Some(Variant::Xmaml),
            RunVariant::Base | RunVariant::Finetune => None,
        }
    }
}

impl std::fmt::Display for RunVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-language cap on training samples: a count or `"unlimited"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Cap {
    #[default]
    Unlimited,
    Samples(usize),
}

impl Serialize for Cap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cap::Unlimited => s.serialize_str("unlimited"),
            Cap::Samples(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Cap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Cap::Samples(n as usize)),
            Raw::S(s) if s == "unlimited" => Ok(Cap::Unlimited),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "cap must be a count or \"unlimited\", got `{s}`"
            ))),
        }
    }
}

/// Where the labeled corpus comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus file (JSONL, CSV or TSV by extension).
    pub corpus: Option<PathBuf>,
    /// Synthetic family generated in memory.
    pub synth: Option<FamilySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub variant: RunVariant,
    pub source: String,
    /// Auxiliary language for zero-shot meta-learning.
    #[serde(default)]
    pub auxiliary: Option<String>,
    /// Languages evaluated in zero-shot mode.
    #[serde(default)]
    pub targets: Vec<String>,
    /// Languages whose training data is used (domain adaptation).
    #[serde(default)]
    pub training_languages: Vec<String>,
    #[serde(default)]
    pub cap: Cap,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSpec,
    /// Base-model training on the source language.
    #[serde(default)]
    pub base: SupervisedConfig,
    /// Fine-tuning baseline.
    #[serde(default)]
    pub finetune: SupervisedConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default)]
    pub episodes: EpisodeConfig,
    #[serde(default)]
    pub self_train: SelfTrainConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that don't need the corpus.
    pub fn validate(&self) -> Result<()> {
        let mut checks = vec![
            self.model.validate(),
            self.base.validate(),
            self.finetune.validate(),
            self.meta.validate(),
            self.episodes.validate(),
        ];
        if self.variant == RunVariant::SelfTrain {
            checks.push(self.self_train.validate());
        }
        if let (None, Some(spec)) = (&self.data.corpus, &self.data.synth) {
            checks.push(spec.validate());
        }
        let mut problems: Vec<String> = checks
            .into_iter()
            .filter_map(|r| r.err().map(|e| e.to_string()))
            .collect();
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".into());
        }
        if let Cap::Samples(0) = self.cap {
            problems.push("cap must be >= 1 or \"unlimited\"".into());
        }
        match (&self.data.corpus, &self.data.synth) {
            (Some(_), Some(_)) | (None, None) => {
                problems.push("data: set exactly one of `corpus` and `synth`".into())
            }
            _ => {}
        }
        match self.experiment {
            ExperimentKind::ZeroShot => {
                if self.targets.is_empty() {
                    problems.push("zero_shot: `targets` must name at least one language".into());
                }
                if self.targets.contains(&self.source) {
                    problems.push(format!(
                        "zero_shot: source `{}` cannot be a target",
                        self.source
                    ));
                }
                let needs_aux = matches!(
                    self.variant,
                    RunVariant::Maml
                        | RunVariant::Hatemaml
                        | RunVariant::Xmaml
                        | RunVariant::Finetune
                );
                match &self.auxiliary {
                    None if needs_aux => problems.push(format!(
                        "zero_shot/{}: an auxiliary language is required; meta-learning is impossible without the required auxiliary language",
                        self.variant
                    )),
                    Some(aux) if *aux == self.source || self.targets.contains(aux) => problems.push(format!(
                        "zero_shot: auxiliary `{aux}` must differ from the source and the targets"
                    )),
                    _ => {}
                }
                if self.variant == RunVariant::SelfTrain && self.targets.len() != 1 {
                    problems.push("self_train: exactly one target language is required".into());
                }
            }
            ExperimentKind::DomainAdaptation => {
                if !self.training_languages.contains(&self.source) {
                    problems.push(format!(
                        "domain_adaptation: training_languages must include the source `{}`",
                        self.source
                    ));
                }
                if self.training_languages.len() < 2 {
                    problems.push(
                        "domain_adaptation: at least two training languages are required".into(),
                    );
                }
            }
            ExperimentKind::Full => {}
        }
        if matches!(
            self.experiment,
            ExperimentKind::DomainAdaptation | ExperimentKind::Full
        ) && matches!(self.variant, RunVariant::Xmaml | RunVariant::SelfTrain)
        {
            problems.push(format!(
                "{:?}: variant `{}` is zero-shot only",
                self.experiment, self.variant
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        match (&self.data.corpus, &self.data.synth) {
            (Some(path), None) => Corpus::load(path, Format::from_path(path)?),
            (None, Some(spec)) => gen_family(spec),
            _ => Err(Error::Config(
                "data: set exactly one of `corpus` and `synth`".into(),
            )),
        }
    }
}

/// A validated config bound to its corpus.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: RunConfig,
    pub corpus: Corpus,
}

impl Experiment {
    pub fn new(config: RunConfig, corpus: Corpus) -> Result<Self> {
        config.validate()?;
        let languages: BTreeSet<&str> = corpus.languages().collect();
        let mut named: Vec<&String> = vec![&config.source];
        named.extend(config.auxiliary.iter());
        named.extend(config.targets.iter());
        named.extend(config.training_languages.iter());
        for l in named {
            if !languages.contains(l.as_str()) {
                return Err(Error::MissingData(format!(
                    "language `{l}` is not present in the corpus"
                )));
            }
        }
        if config.experiment == ExperimentKind::DomainAdaptation
            && languages
                .iter()
                .all(|l| config.training_languages.iter().any(|t| t == l))
        {
            return Err(Error::Config(
                "domain_adaptation: no held-out language left outside training_languages".into(),
            ));
        }
        Ok(Self { config, corpus })
    }

    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let corpus = config.load_corpus()?;
        Self::new(config, corpus)
    }

    /// Languages whose test split is scored.
    pub fn eval_languages(&self) -> Vec<String> {
        match self.config.experiment {
            ExperimentKind::ZeroShot => self.config.targets.clone(),
            ExperimentKind::DomainAdaptation | ExperimentKind::Full => {
                if self.config.targets.is_empty() {
                    self.corpus.languages().map(String::from).collect()
                } else {
                    self.config.targets.clone()
                }
            }
        }
    }

    fn training_languages(&self) -> Vec<String> {
        match self.config.experiment {
            ExperimentKind::ZeroShot => vec![self.config.source.clone()],
            ExperimentKind::DomainAdaptation => self.config.training_languages.clone(),
            ExperimentKind::Full => self.corpus.languages().map(String::from).collect(),
        }
    }

    /// The corpus with the per-language cap applied for this seed.
    pub fn capped(&self, seed: u64) -> Result<Corpus> {
        match self.config.cap {
            Cap::Unlimited => Ok(self.corpus.clone()),
            Cap::Samples(n) => cap(&self.corpus, n, derive_seed(seed, "cap")),
        }
    }

    pub fn train_base(&self, seed: u64) -> Result<TrainedModel> {
        let corpus = self.capped(seed)?;
        let source = corpus.require(&self.config.source, Split::Train, "source")?;
        let spec = &self.config.model;
        spec.validate()?;
        let init = spec.classifier().init::<f64>(derive_seed(seed, "init"));
        let cfg = SupervisedConfig {
            seed: derive_seed(seed, "base"),
            ..self.config.base.clone()
        };
        train_base(spec, init, &source, &cfg)
    }

    fn meta_config(
        &self,
        variant: Variant,
        choice: TrainingChoice,
        seed: u64,
    ) -> (MetaConfig, EpisodeConfig) {
        let meta = MetaConfig {
            variant,
            training_choice: choice,
            seed: derive_seed(seed, "meta"),
            ..self.config.meta.clone()
        };
        let episodes = EpisodeConfig {
            seed: derive_seed(seed, "episodes"),
            ..self.config.episodes
        };
        (meta, episodes)
    }

    /// Pooled data for domain adaptation and full training. Fine-tuning
    /// reads the capped training split of every training language; the
    /// meta-learners read the source validation split instead of the source
    /// training split, which already trained the base model.
    fn pooled_training(&self, corpus: &Corpus, meta: bool) -> Result<TrainingPool> {
        let mut samples = Vec::new();
        let mut pools = Vec::new();
        for l in self.training_languages() {
            let pool = if l == self.config.source {
                if meta {
                    PoolSpec::for_role(Role::Source, &l)
                } else {
                    PoolSpec {
                        role: Role::Source,
                        language: l,
                        split: Split::Train,
                    }
                }
            } else {
                PoolSpec::for_role(Role::Target, &l)
            };
            samples.extend(corpus.require(&pool.language, pool.split, "training")?);
            pools.push(pool);
        }
        Ok(TrainingPool {
            samples,
            pools,
            domain_language: String::new(),
        })
    }

    /// Trains the configured variant on top of `base`.
    pub fn adapt(&self, base: &TrainedModel, seed: u64) -> Result<TrainedModel> {
        let cfg = &self.config;
        let variant = cfg.variant;
        match (cfg.experiment, variant) {
            (_, RunVariant::Base) => Ok(base.clone()),
            (_, RunVariant::SelfTrain) => Ok(self.self_train(base, seed)?.model),
            (ExperimentKind::ZeroShot, RunVariant::Finetune) => {
                let aux = cfg.auxiliary.as_deref().expect("validated");
                let mut pooled = self
                    .corpus
                    .require(&cfg.source, Split::Validation, "source")?;
                pooled.extend(self.corpus.require(aux, Split::Train, "auxiliary")?);
                finetune(base, &pooled, &self.finetune_config(seed))
            }
            (ExperimentKind::ZeroShot, v) => {
                let (meta, episodes) = self.meta_config(
                    v.meta_variant().expect("episodic"),
                    TrainingChoice::ZeroShot,
                    seed,
                );
                let aux = cfg.auxiliary.as_deref().expect("validated");
                Ok(run_algorithm1(base, &self.corpus, &cfg.source, aux, &meta, &episodes)?.model)
            }
            (_, RunVariant::Finetune) => {
                let corpus = self.capped(seed)?;
                let pool = self.pooled_training(&corpus, false)?;
                finetune(base, &pool.samples, &self.finetune_config(seed))
            }
            (_, v) => {
                let corpus = self.capped(seed)?;
                let pool = self.pooled_training(&corpus, true)?;
                let (meta, episodes) = self.meta_config(
                    v.meta_variant().expect("episodic"),
                    TrainingChoice::FewShot,
                    seed,
                );
                let domain: Vec<Sample> = pool
                    .samples
                    .iter()
                    .filter(|s| s.language != cfg.source)
                    .cloned()
                    .collect();
                let data = match meta.variant {
                    Variant::Hatemaml => Some(domain.as_slice()),
                    _ => None,
                };
                Ok(meta_train(base, &pool.samples, data, &meta, &episodes)?.model)
            }
        }
    }

    fn finetune_config(&self, seed: u64) -> SupervisedConfig {
        SupervisedConfig {
            seed: derive_seed(seed, "finetune"),
            ..self.config.finetune.clone()
        }
    }

    /// Self-training on the single target's unlabeled training texts.
    pub fn self_train(&self, base: &TrainedModel, seed: u64) -> Result<SelfTrainOutcome> {
        let cfg = &self.config;
        let target = cfg
            .targets
            .first()
            .ok_or_else(|| Error::Config("self_train needs a target".into()))?;
        let pool = self.corpus.unlabeled(target, Split::Train);
        if pool.is_empty() {
            return Err(Error::MissingData(format!(
                "no unlabeled training text for `{target}`"
            )));
        }
        let source_val = self
            .corpus
            .require(&cfg.source, Split::Validation, "source")?;
        let (meta, episodes) = self.meta_config(Variant::Hatemaml, TrainingChoice::FewShot, seed);
        let st = SelfTrainConfig {
            meta: MetaConfig {
                seed: meta.seed,
                ..cfg.self_train.meta.clone()
            },
            ..cfg.self_train.clone()
        };
        self_train_loop(base, &pool, &source_val, &st, &episodes)
    }

    /// Macro-F1 on the test split of every evaluation language.
    pub fn evaluate(&self, model: &TrainedModel) -> Result<Vec<(String, f64)>> {
        self.eval_languages()
            .into_iter()
            .map(|l| {
                let test = self.corpus.require(&l, Split::Test, "evaluation")?;
                let preds = model.predict_texts(test.iter().map(|s| s.text.as_str()))?;
                let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
                let golds: Vec<usize> = test.iter().map(|s| usize::from(s.label)).collect();
                Ok((l, macro_f1(&labels, &golds)?))
            })
            .collect()
    }

    /// Base training, adaptation and evaluation for one seed.
    pub fn run_seed(&self, seed: u64) -> Result<(TrainedModel, Vec<(String, f64)>)> {
        let base = self.train_base(seed)?;
        let model = self.adapt(&base, seed)?;
        let scores = self.evaluate(&model)?;
        Ok((model, scores))
    }

    /// Name used in reports, e.g. `zero_shot` or `domain_adaptation/cap=2048`.
    pub fn label(&self) -> String {
        let kind = match self.config.experiment {
            ExperimentKind::ZeroShot => "zero_shot",
            ExperimentKind::DomainAdaptation => "domain_adaptation",
            ExperimentKind::Full => "full",
        };
        match self.config.cap {
            Cap::Unlimited => kind.to_string(),
            Cap::Samples(n) => format!("{kind}/cap={n}"),
        }
    }
}

/// Everything one seed of a run produced.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub base: TrainedModel,
    pub model: TrainedModel,
    pub scores: Vec<(String, f64)>,
    pub audits: Vec<SilverAudit>,
}

/// Multi-seed driver. `base_for` supplies the base model of a seed (fresh
/// training or a saved model); seeds run concurrently.
pub fn run_experiment<B>(
    exp: &Experiment,
    base_for: B,
) -> Result<(EvalReport, Vec<MetricRecord>, Vec<SeedOutcome>)>
where
    B: Fn(u64) -> Result<TrainedModel> + Sync,
{
    let outcomes = Mutex::new(Vec::new());
    let (report, records) = run_multi_seed(
        &exp.label(),
        exp.config.variant.as_str(),
        &exp.config.seeds,
        |seed| {
            let base = base_for(seed)?;
            let (model, audits) = match exp.config.variant {
                RunVariant::SelfTrain => {
                    let out = exp.self_train(&base, seed)?;
                    (out.model, out.audits)
                }
                _ => (exp.adapt(&base, seed)?, Vec::new()),
            };
            let scores = exp.evaluate(&model)?;
            outcomes
                .lock()
                .expect("no panics while held")
                .push(SeedOutcome {
                    seed,
                    base,
                    model,
                    scores: scores.clone(),
                    audits,
                });
            Ok(scores)
        },
    )?;
    let mut outcomes = outcomes.into_inner().expect("no panics while held");
    let order = |s: u64| exp.config.seeds.iter().position(|&x| x == s);
    outcomes.sort_by_key(|o| order(o.seed));
    Ok((report, records, outcomes))
}
