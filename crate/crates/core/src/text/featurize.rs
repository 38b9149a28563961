//! Signed feature hashing of word n-grams and character n-grams.

use serde::{Deserialize, Serialize};

/// Featurizer settings; persisted next to every model file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    /// Hashed feature dimension.
    pub dim: usize,
    /// Inclusive word n-gram range; `None` (written `"none"`) disables
    /// word features.
    #[serde(with = "ngram_range")]
    pub word_ngrams: Option<(usize, usize)>,
    /// Inclusive character n-gram range, computed inside each word.
    #[serde(with = "ngram_range")]
    pub char_ngrams: Option<(usize, usize)>,
    pub hash_seed: u64,
}

mod ngram_range {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Range((usize, usize)),
        Off(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<(usize, usize)>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(r) => Raw::Range(*r).serialize(s),
            None => Raw::Off("none".into()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<(usize, usize)>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Range(r) => Ok(Some(r)),
            Raw::Off(s) if s == "none" => Ok(None),
            Raw::Off(s) => Err(serde::de::Error::custom(format!(
                "expected [lo, hi] or \"none\", got `{s}`"
            ))),
        }
    }
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            dim: 32768,
            word_ngrams: Some((1, 1)),
            char_ngrams: Some((3, 5)),
            hash_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("featurizer.dim must be positive".to_string());
        }
        for (name, range) in [
            ("word_ngrams", self.word_ngrams),
            ("char_ngrams", self.char_ngrams),
        ] {
            if let Some((lo, hi)) = range {
                if lo == 0 || lo > hi {
                    problems.push(format!("featurizer.{name} range ({lo}, {hi}) is invalid"));
                }
            }
        }
        if self.word_ngrams.is_none() && self.char_ngrams.is_none() {
            problems.push("featurizer needs word or char n-grams".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

/// Sparse hashed representation; entries sorted by index, no zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded 64-bit hash of a namespaced term.
pub fn hash_term(namespace: u8, term: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(seed);
    for &b in std::iter::once(&namespace).chain(term.as_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// Bucket index and sign for a term.
pub fn bucket(namespace: u8, term: &str, config: &FeaturizerConfig) -> (usize, f64) {
    let h = hash_term(namespace, term, config.hash_seed);
    let index = (h % config.dim as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (index, sign)
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const WORD_NS: u8 = b'w';
const CHAR_NS: u8 = b'c';

pub fn featurize(text: &str, config: &FeaturizerConfig) -> FeatureVector {
    let tokens = tokenize(text);
    let mut raw: Vec<(usize, f64)> = Vec::new();

    if let Some((lo, hi)) = config.word_ngrams {
        for n in lo..=hi {
            for gram in tokens.windows(n) {
                raw.push(bucket(WORD_NS, &gram.join(" "), config));
            }
        }
    }
    if let Some((lo, hi)) = config.char_ngrams {
        for token in &tokens {
            let padded: Vec<char> = std::iter::once('<')
                .chain(token.chars())
                .chain(std::iter::once('>'))
                .collect();
            for n in lo..=hi {
                for gram in padded.windows(n) {
                    let s: String = gram.iter().collect();
                    raw.push(bucket(CHAR_NS, &s, config));
                }
            }
        }
    }

    raw.sort_by_key(|&(i, _)| i);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
    for (i, v) in raw {
        match entries.last_mut() {
            Some((j, acc)) if *j == i => *acc += v,
            _ => entries.push((i, v)),
        }
    }
    entries.retain(|&(_, v)| v != 0.0);
    FeatureVector {
        dim: config.dim,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn empty_text_is_empty() {
        let cfg = FeaturizerConfig::default();
        assert!(featurize("", &cfg).is_empty());
        assert!(featurize("  ,;!  ", &cfg).is_empty());
    }

    #[test]
    fn lowercases_and_counts() {
        let cfg = FeaturizerConfig {
            char_ngrams: None,
            ..Default::default()
        };
        let a = featurize("Hello hello HELLO", &cfg);
        assert_eq!(a.entries.len(), 1);
        assert_eq!(a.entries[0].1.abs(), 3.0);
    }

    // Collision oracle: count unigram index collisions over random pairs
    // of distinct tokens.
    #[test]
    fn unigram_collision_rate_is_low() {
        let cfg = FeaturizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut collisions = 0;
        let mut pairs = 0;
        while pairs < 1000 {
            let a: String = (0..rng.gen_range(2..9))
                .map(|_| rng.gen_range('a'..='z'))
                .collect();
            let b: String = (0..rng.gen_range(2..9))
                .map(|_| rng.gen_range('a'..='z'))
                .collect();
            if a == b {
                continue;
            }
            pairs += 1;
            if bucket(WORD_NS, &a, &cfg).0 == bucket(WORD_NS, &b, &cfg).0 {
                collisions += 1;
            }
        }
        assert!(
            (collisions as f64) / 1000.0 < 0.05,
            "{collisions} collisions"
        );
    }

    #[test]
    fn hash_seed_changes_buckets() {
        let a = FeaturizerConfig::default();
        let b = FeaturizerConfig {
            hash_seed: 99,
            ..Default::default()
        };
        let words: HashSet<_> = ["alpha", "beta", "gamma", "delta"]
            .iter()
            .map(|w| bucket(WORD_NS, w, &a).0 == bucket(WORD_NS, w, &b).0)
            .collect();
        assert!(words.contains(&false));
    }

    proptest! {
        #[test]
        fn deterministic_and_in_range(text in "\\PC{0,60}") {
            let cfg = FeaturizerConfig { dim: 1024, ..Default::default() };
            let a = featurize(&text, &cfg);
            prop_assert_eq!(&a, &featurize(&text, &cfg));
            prop_assert!(a.entries.iter().all(|&(i, v)| i < 1024 && v != 0.0));
            prop_assert!(a.entries.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }
}
