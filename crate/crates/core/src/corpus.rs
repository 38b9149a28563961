//! Labeled multilingual corpora and the training pools built from them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objective::Identified;
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One labeled text. `label` is 1 for hate, 0 otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub label: u8,
    pub language: String,
    pub split: Split,
}

impl Identified for Sample {
    fn id(&self) -> &str {
        &self.id
    }
}

/// Text with no label attached; what self-training is allowed to see.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnlabeledText {
    pub id: String,
    pub text: String,
    pub language: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
    Tsv,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(Format::Jsonl),
            Some("csv") => Ok(Format::Csv),
            Some("tsv") => Ok(Format::Tsv),
            _ => Err(Error::Config(format!(
                "cannot infer corpus format of {} (use .jsonl, .csv or .tsv)",
                path.display()
            ))),
        }
    }
}

/// Validated sample collection with a per-language index.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Corpus {
    samples: Vec<Sample>,
    by_language: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, s) in samples.iter().enumerate() {
            validate_sample(s).map_err(|m| Error::Config(format!("sample {i}: {m}")))?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId {
                    path: "<memory>".into(),
                    line: i + 1,
                    id: s.id.clone(),
                });
            }
        }
        Ok(Self::new_unchecked(samples))
    }

    fn new_unchecked(samples: Vec<Sample>) -> Self {
        let mut by_language: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_language.entry(s.language.clone()).or_default().push(i);
        }
        Self {
            samples,
            by_language,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.by_language.keys().map(String::as_str)
    }

    pub fn select(&self, language: &str, split: Split) -> Vec<&Sample> {
        self.by_language
            .get(language)
            .map(|idx| {
                idx.iter()
                    .map(|&i| &self.samples[i])
                    .filter(|s| s.split == split)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Owned copies of one language/split, failing when it is empty.
    pub fn require(&self, language: &str, split: Split, role: &str) -> Result<Vec<Sample>> {
        if !self.by_language.contains_key(language) {
            return Err(Error::MissingData(format!(
                "{role} language `{language}` is not present in the corpus"
            )));
        }
        let found: Vec<Sample> = self.select(language, split).into_iter().cloned().collect();
        if found.is_empty() {
            return Err(Error::MissingData(format!(
                "{role} language `{language}` has no {split} samples"
            )));
        }
        Ok(found)
    }

    /// Texts of one language/split with the labels stripped.
    pub fn unlabeled(&self, language: &str, split: Split) -> Vec<UnlabeledText> {
        self.select(language, split)
            .into_iter()
            .map(|s| UnlabeledText {
                id: s.id.clone(),
                text: s.text.clone(),
                language: s.language.clone(),
            })
            .collect()
    }

    pub fn merge(corpora: impl IntoIterator<Item = Corpus>) -> Result<Corpus> {
        Corpus::new(corpora.into_iter().flat_map(|c| c.samples).collect())
    }

    /// SHA-256 over the canonical JSONL rendering.
    pub fn digest(&self) -> String {
        digest_samples(&self.samples)
    }

    pub fn load(path: &Path, format: Format) -> Result<Corpus> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let samples = match format {
            Format::Jsonl => parse_jsonl(&text, path)?,
            Format::Csv => parse_delimited(&text, path, b',')?,
            Format::Tsv => parse_delimited(&text, path, b'\t')?,
        };
        let mut seen: HashSet<&str> = HashSet::new();
        for (line, s) in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId {
                    path: path.to_path_buf(),
                    line: *line,
                    id: s.id.clone(),
                });
            }
        }
        Ok(Corpus::new_unchecked(
            samples.into_iter().map(|(_, s)| s).collect(),
        ))
    }

    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        let body = match format {
            Format::Jsonl => to_jsonl(&self.samples)?,
            Format::Csv => to_delimited(&self.samples, b',', path)?,
            Format::Tsv => to_delimited(&self.samples, b'\t', path)?,
        };
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

pub fn digest_samples(samples: &[Sample]) -> String {
    let mut hasher = Sha256::new();
    for s in samples {
        hasher.update(
            serde_json::to_string(s)
                .expect("sample serializes")
                .as_bytes(),
        );
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

fn validate_sample(s: &Sample) -> std::result::Result<(), String> {
    if s.id.is_empty() {
        return Err("empty id".into());
    }
    if s.label > 1 {
        return Err(format!("invalid label {}", s.label));
    }
    if s.language.is_empty() {
        return Err("empty language".into());
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawRecord {
    id: serde_json::Value,
    text: String,
    label: serde_json::Value,
    language: String,
    split: String,
}

fn parse_label(value: &str) -> Option<u8> {
    match value.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

fn finish_record(
    path: &Path,
    line: usize,
    id: String,
    text: String,
    label: &str,
    language: String,
    split: &str,
) -> Result<Sample> {
    let label = parse_label(label).ok_or_else(|| Error::InvalidLabel {
        path: path.to_path_buf(),
        line,
        value: label.to_string(),
    })?;
    let split = split.parse::<Split>().map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        message,
    })?;
    let sample = Sample {
        id,
        text,
        label,
        language,
        split,
    };
    validate_sample(&sample).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        message,
    })?;
    Ok(sample)
}

fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<(usize, Sample)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: e.column(),
            message: e.to_string(),
        })?;
        let id = match rec.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    column: 1,
                    message: format!("id must be a string or number, got {other}"),
                })
            }
        };
        let label = match &rec.label {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        out.push((
            line,
            finish_record(path, line, id, rec.text, &label, rec.language, &rec.split)?,
        ));
    }
    Ok(out)
}

fn parse_delimited(text: &str, path: &Path, delimiter: u8) -> Result<Vec<(usize, Sample)>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_reader(text.as_bytes());
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let (ci, ct, cl, cg, cs) = (
        column("id")?,
        column("text")?,
        column("label")?,
        column("language")?,
        column("split")?,
    );
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| record.get(c).unwrap_or("").to_string();
        out.push((
            line,
            finish_record(
                path,
                line,
                field(ci),
                field(ct),
                &field(cl),
                field(cg),
                &field(cs),
            )?,
        ));
    }
    Ok(out)
}

fn to_jsonl(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

fn to_delimited(samples: &[Sample], delimiter: u8, path: &Path) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    writer
        .write_record(["id", "text", "label", "language", "split"])
        .map_err(io)?;
    for s in samples {
        writer
            .write_record([
                s.id.as_str(),
                s.text.as_str(),
                &s.label.to_string(),
                s.language.as_str(),
                &s.split.to_string(),
            ])
            .map_err(io)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("utf-8 in, utf-8 out"))
}

/// Training-data choice of the meta-learning algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingChoice {
    ZeroShot,
    FewShot,
}

/// Role a language plays in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Auxiliary,
    Target,
}

/// Which slice of a language feeds meta-training for a given role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub role: Role,
    pub language: String,
    pub split: Split,
}

impl PoolSpec {
    /// Source contributes its validation split; auxiliary and target
    /// languages contribute their training splits.
    pub fn for_role(role: Role, language: &str) -> Self {
        let split = match role {
            Role::Source => Split::Validation,
            Role::Auxiliary | Role::Target => Split::Train,
        };
        Self {
            role,
            language: language.to_string(),
            split,
        }
    }
}

/// Pooled meta-training data with provenance kept per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPool {
    pub samples: Vec<Sample>,
    pub pools: Vec<PoolSpec>,
    /// Language whose samples form the domain-query pool.
    pub domain_language: String,
}

impl TrainingPool {
    pub fn domain_pool(&self) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| s.language == self.domain_language)
            .cloned()
            .collect()
    }
}

/// Builds `D` for the algorithm: source validation plus auxiliary
/// training data (zero-shot) or target training data (few-shot).
pub fn assemble_training_data(
    corpus: &Corpus,
    choice: TrainingChoice,
    source: &str,
    aux_or_target: &str,
) -> Result<TrainingPool> {
    let other_role = match choice {
        TrainingChoice::ZeroShot => Role::Auxiliary,
        TrainingChoice::FewShot => Role::Target,
    };
    if source == aux_or_target {
        return Err(Error::Config(format!(
            "source and {other_role:?} language must differ (both `{source}`)"
        )));
    }
    let pools = vec![
        PoolSpec::for_role(Role::Source, source),
        PoolSpec::for_role(other_role, aux_or_target),
    ];
    let mut samples = Vec::new();
    for pool in &pools {
        let role = format!("{:?}", pool.role).to_lowercase();
        let found = corpus
            .require(&pool.language, pool.split, &role)
            .map_err(|e| match (choice, e) {
                (TrainingChoice::ZeroShot, Error::MissingData(m))
                    if pool.role == Role::Auxiliary =>
                {
                    Error::MissingData(format!(
                        "{m}; meta-learning is impossible without the required auxiliary language"
                    ))
                }
                (_, e) => e,
            })?;
        samples.extend(found);
    }
    Ok(TrainingPool {
        samples,
        pools,
        domain_language: aux_or_target.to_string(),
    })
}

/// Per language, keeps at most `n` training samples chosen uniformly
/// without replacement; other splits pass through untouched.
pub fn cap(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Config("cap must be at least 1".into()));
    }
    let mut keep = vec![true; corpus.samples.len()];
    for (language, idx) in &corpus.by_language {
        let train: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| corpus.samples[i].split == Split::Train)
            .collect();
        if train.len() <= n {
            continue;
        }
        let mut rng = rng_for(seed, &format!("cap/{language}"));
        let mut chosen = vec![false; train.len()];
        for j in sample_indices(&mut rng, train.len(), n) {
            chosen[j] = true;
        }
        for (j, &i) in train.iter().enumerate() {
            keep[i] = chosen[j];
        }
    }
    let samples = corpus
        .samples
        .iter()
        .zip(keep)
        .filter(|&(_s, k)| k)
        .map(|(s, _k)| s.clone())
        .collect();
    Ok(Corpus::new_unchecked(samples))
}
