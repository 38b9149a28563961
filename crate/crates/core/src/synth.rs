//! Synthetic language families: labeled corpora whose languages share a
//! controllable fraction of their vocabularies.
//!
//! Every language owns `vocab_size` concepts. For each related pair a block
//! of `round(rho * V)` concepts is shared by exactly those two languages; the
//! rest of a language's vocabulary is private. A fixed fraction of every
//! block is "marker" concepts; a text is hateful iff it holds more than
//! `marker_threshold` markers, before label noise.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::distributions::{Bernoulli, Distribution};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample, Split};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::text::{hash_term, tokenize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relatedness {
    pub a: String,
    pub b: String,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySpec {
    pub languages: Vec<String>,
    pub vocab_size: usize,
    /// Shared-vocabulary fraction per pair; unlisted pairs share nothing.
    pub relatedness: Vec<Relatedness>,
    /// Fraction of each vocabulary block that acts as markers.
    pub marker_fraction: f64,
    /// Probability that a free token slot of a hateful text is a marker.
    pub marker_density: f64,
    pub marker_threshold: usize,
    pub label_noise: f64,
    /// Fraction of texts generated as hateful before noise.
    pub hate_rate: f64,
    pub min_length: usize,
    pub max_length: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

fn rel(a: &str, b: &str, rho: f64) -> Relatedness {
    Relatedness {
        a: a.into(),
        b: b.into(),
        rho,
    }
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            languages: ["en", "es", "it", "da", "de", "ar", "tr", "el"]
                .map(String::from)
                .to_vec(),
            vocab_size: 2000,
            relatedness: vec![
                rel("en", "da", 0.2),
                rel("en", "de", 0.2),
                rel("en", "es", 0.1),
                rel("en", "it", 0.1),
                rel("en", "ar", 0.05),
                rel("en", "tr", 0.05),
                rel("en", "el", 0.05),
                rel("da", "de", 0.4),
                rel("es", "it", 0.4),
                rel("es", "el", 0.3),
                rel("ar", "tr", 0.6),
                rel("tr", "el", 0.2),
            ],
            marker_fraction: 0.05,
            marker_density: 0.25,
            marker_threshold: 0,
            label_noise: 0.1,
            hate_rate: 0.5,
            min_length: 10,
            max_length: 30,
            train: 3000,
            validation: 500,
            test: 500,
            seed: 0,
        }
    }
}

impl FamilySpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Symmetric relatedness lookup; 0 for unlisted pairs.
    pub fn rho(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        self.relatedness
            .iter()
            .find(|r| (r.a == a && r.b == b) || (r.a == b && r.b == a))
            .map_or(0.0, |r| r.rho)
    }

    fn block_size(&self, rho: f64) -> usize {
        (rho * self.vocab_size as f64).round() as usize
    }

    fn block_markers(&self, size: usize) -> usize {
        (self.marker_fraction * size as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.languages.is_empty() {
            problems.push("synth.languages is empty".to_string());
        }
        let mut seen = BTreeSet::new();
        for l in &self.languages {
            if l.is_empty() || !l.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                problems.push(format!("synth.languages: invalid code `{l}`"));
            }
            if !seen.insert(l.as_str()) {
                problems.push(format!("synth.languages: duplicate `{l}`"));
            }
        }
        if self.vocab_size == 0 {
            problems.push("synth.vocab_size must be >= 1".to_string());
        }
        let mut pairs = BTreeSet::new();
        for r in &self.relatedness {
            for l in [&r.a, &r.b] {
                if !seen.contains(l.as_str()) {
                    problems.push(format!("synth.relatedness: unknown language `{l}`"));
                }
            }
            if r.a == r.b {
                problems.push(format!("synth.relatedness: self pair `{}`", r.a));
            }
            let key = if r.a < r.b {
                (&r.a, &r.b)
            } else {
                (&r.b, &r.a)
            };
            if !pairs.insert(key) {
                problems.push(format!(
                    "synth.relatedness: pair {}-{} listed twice",
                    r.a, r.b
                ));
            }
            if !(0.0..=1.0).contains(&r.rho) {
                problems.push(format!(
                    "synth.relatedness: rho {}-{} = {} outside [0, 1]",
                    r.a, r.b, r.rho
                ));
            }
        }
        for l in &self.languages {
            let shared: usize = self
                .languages
                .iter()
                .filter(|o| *o != l)
                .map(|o| self.block_size(self.rho(l, o)))
                .sum();
            if shared > self.vocab_size {
                problems.push(format!(
                    "synth.relatedness: shared blocks of `{l}` total {shared} > vocab_size {}",
                    self.vocab_size
                ));
            }
        }
        if !(self.marker_fraction > 0.0 && self.marker_fraction < 1.0) {
            problems.push(format!(
                "synth.marker_fraction must lie in (0, 1), got {}",
                self.marker_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.marker_density) {
            problems.push(format!(
                "synth.marker_density must lie in [0, 1], got {}",
                self.marker_density
            ));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            problems.push(format!(
                "synth.label_noise must lie in [0, 0.5), got {}",
                self.label_noise
            ));
        }
        if !(0.0..=1.0).contains(&self.hate_rate) {
            problems.push(format!(
                "synth.hate_rate must lie in [0, 1], got {}",
                self.hate_rate
            ));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            problems.push(format!(
                "synth length range [{}, {}] is invalid",
                self.min_length, self.max_length
            ));
        }
        if self.marker_threshold + 1 > self.min_length {
            problems.push("synth.marker_threshold must be below min_length".to_string());
        }
        if self.train + self.validation + self.test == 0 {
            problems.push("synth: all split sizes are zero".to_string());
        }
        if problems.is_empty() {
            let vocab = Vocabularies::build(self);
            for (l, v) in self.languages.iter().zip(&vocab.per_language) {
                if v.markers.is_empty() || v.neutral.is_empty() {
                    problems.push(format!(
                        "synth: `{l}` needs at least one marker and one neutral token"
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, Default)]
struct LanguageVocab {
    markers: Vec<usize>,
    neutral: Vec<usize>,
}

struct Vocabularies {
    per_language: Vec<LanguageVocab>,
    words: Vec<String>,
}

impl Vocabularies {
    fn build(spec: &FamilySpec) -> Self {
        let n = spec.languages.len();
        let mut per_language = vec![LanguageVocab::default(); n];
        let mut next = 0usize;
        let mut add_block =
            |members: &[usize], size: usize, per_language: &mut Vec<LanguageVocab>| {
                let markers = spec.block_markers(size);
                for k in 0..size {
                    for &m in members {
                        if k < markers {
                            per_language[m].markers.push(next + k);
                        } else {
                            per_language[m].neutral.push(next + k);
                        }
                    }
                }
                next += size;
            };
        let mut shared = vec![0usize; n];
        for i in 0..n {
            for j in i + 1..n {
                let size = spec.block_size(spec.rho(&spec.languages[i], &spec.languages[j]));
                if size > 0 {
                    add_block(&[i, j], size, &mut per_language);
                    shared[i] += size;
                    shared[j] += size;
                }
            }
        }
        for (i, used) in shared.iter().enumerate() {
            add_block(
                &[i],
                spec.vocab_size.saturating_sub(*used),
                &mut per_language,
            );
        }
        let words = pseudo_words(next, spec.seed);
        Self {
            per_language,
            words,
        }
    }
}

const ONSETS: [&str; 20] = [
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br",
    "st",
];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Distinct pronounceable strings for concept ids `0..count`.
fn pseudo_words(count: usize, seed: u64) -> Vec<String> {
    let mut seen = HashSet::with_capacity(count);
    let mut words = Vec::with_capacity(count);
    for id in 0..count {
        let mut attempt = 0u64;
        loop {
            let mut h = hash_term(b'v', &format!("{id}/{attempt}"), seed);
            let mut word = String::new();
            for _ in 0..5 {
                let syllable = (h % 100) as usize;
                h /= 100;
                word.push_str(ONSETS[syllable / 5]);
                word.push_str(NUCLEI[syllable % 5]);
            }
            if seen.insert(word.clone()) {
                words.push(word);
                break;
            }
            attempt += 1;
        }
    }
    words
}

fn generate_text(
    spec: &FamilySpec,
    vocab: &LanguageVocab,
    words: &[String],
    rng: &mut ChaCha8Rng,
) -> (String, u8) {
    let len = rng.gen_range(spec.min_length..=spec.max_length);
    let hateful = rng.gen_bool(spec.hate_rate);
    let t = spec.marker_threshold;
    let markers = if hateful {
        let extra = (0..len - t - 1)
            .filter(|_| rng.gen_bool(spec.marker_density))
            .count();
        t + 1 + extra
    } else {
        rng.gen_range(0..=t)
    };
    let mut tokens: Vec<usize> = (0..len)
        .map(|k| {
            let pool = if k < markers {
                &vocab.markers
            } else {
                &vocab.neutral
            };
            pool[rng.gen_range(0..pool.len())]
        })
        .collect();
    tokens.shuffle(rng);
    let text = tokens
        .iter()
        .map(|&c| words[c].as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let flip = Bernoulli::new(spec.label_noise)
        .expect("validated")
        .sample(rng);
    (text, u8::from(hateful != flip))
}

/// Generates the family corpus. Languages are generated concurrently, each
/// from its own sub-seed.
pub fn gen_family(spec: &FamilySpec) -> Result<Corpus> {
    spec.validate()?;
    let vocab = Vocabularies::build(spec);
    let per_language: Vec<Vec<Sample>> = spec
        .languages
        .par_iter()
        .zip(&vocab.per_language)
        .map(|(language, lv)| {
            let mut out = Vec::with_capacity(spec.train + spec.validation + spec.test);
            for (split, n) in [
                (Split::Train, spec.train),
                (Split::Validation, spec.validation),
                (Split::Test, spec.test),
            ] {
                let mut rng = rng_for(spec.seed, &format!("synth/{language}/{split}"));
                for i in 0..n {
                    let (text, label) = generate_text(spec, lv, &vocab.words, &mut rng);
                    out.push(Sample {
                        id: format!("{language}-{split}-{i:05}"),
                        text,
                        label,
                        language: language.clone(),
                        split,
                    });
                }
            }
            out
        })
        .collect();
    Corpus::new(per_language.into_iter().flatten().collect())
}

/// Shared-token fraction between each pair of languages observed in a
/// corpus: `|T_a ∩ T_b|` over the mean of `|T_a|` and `|T_b|`.
pub fn realized_overlap(corpus: &Corpus) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut tokens: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for s in corpus.samples() {
        tokens
            .entry(s.language.as_str())
            .or_default()
            .extend(tokenize(&s.text));
    }
    let mut out = BTreeMap::new();
    for (a, ta) in &tokens {
        let row: BTreeMap<String, f64> = tokens
            .iter()
            .map(|(b, tb)| {
                let shared = ta.intersection(tb).count() as f64;
                (b.to_string(), shared / ((ta.len() + tb.len()) as f64 / 2.0))
            })
            .collect();
        out.insert(a.to_string(), row);
    }
    out
}

/// Spec echo plus realized overlap; written next to the generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyManifest {
    pub spec: FamilySpec,
    pub corpus_digest: String,
    pub realized_overlap: BTreeMap<String, BTreeMap<String, f64>>,
}

impl FamilyManifest {
    pub fn new(spec: &FamilySpec, corpus: &Corpus) -> Self {
        Self {
            spec: spec.clone(),
            corpus_digest: corpus.digest(),
            realized_overlap: realized_overlap(corpus),
        }
    }
}
