//! Meta-task generation: support, query and domain-query triplets.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Identified;
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// K: support shots per episode.
    pub support_shots: usize,
    /// L: shots for the query and the domain-query set.
    pub query_shots: usize,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            support_shots: 32,
            query_shots: 32,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.support_shots == 0 || self.query_shots == 0 {
            return Err(Error::Config(
                "episodes: support_shots and query_shots must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn consumed_per_episode(&self) -> usize {
        self.support_shots + self.query_shots
    }
}

/// One meta-task. `domain_query` is empty when no domain pool was given.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<T> {
    pub support: Vec<T>,
    pub query: Vec<T>,
    pub domain_query: Vec<T>,
}

impl<T: Identified> Episode<T> {
    pub fn ids(set: &[T]) -> Vec<&str> {
        set.iter().map(Identified::id).collect()
    }
}

/// Builds `floor(|D| / (K + L))` episodes. Support and query sets walk a
/// seeded permutation of `data` without replacement. Domain queries are
/// drawn from `domain_pool` by rejection sampling, excluding the episode's
/// own support and query ids; they do not consume `data`.
pub fn build_episode_stream<T>(
    data: &[T],
    domain_pool: Option<&[T]>,
    config: &EpisodeConfig,
) -> Result<Vec<Episode<T>>>
where
    T: Clone + Identified,
{
    config.validate()?;
    let per_episode = config.consumed_per_episode();
    if data.len() < per_episode {
        return Err(Error::InsufficientSamples {
            available: data.len(),
            required: per_episode,
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_for(config.seed, "episodes/permutation"));
    let mut domain_rng = rng_for(config.seed, "episodes/domain-query");

    let count = data.len() / per_episode;
    let mut stream = Vec::with_capacity(count);
    for chunk in order.chunks_exact(per_episode).take(count) {
        let (s_idx, q_idx) = chunk.split_at(config.support_shots);
        let support: Vec<T> = s_idx.iter().map(|&i| data[i].clone()).collect();
        let query: Vec<T> = q_idx.iter().map(|&i| data[i].clone()).collect();
        let domain_query = match domain_pool {
            None => Vec::new(),
            Some(pool) => {
                let taken: HashSet<&str> =
                    support.iter().chain(&query).map(Identified::id).collect();
                draw_domain_query(pool, &taken, config.query_shots, &mut domain_rng)?
            }
        };
        stream.push(Episode {
            support,
            query,
            domain_query,
        });
    }
    Ok(stream)
}

fn draw_domain_query<T: Clone + Identified>(
    pool: &[T],
    taken: &HashSet<&str>,
    shots: usize,
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    let usable: HashSet<&str> = pool
        .iter()
        .map(Identified::id)
        .filter(|id| !taken.contains(id))
        .collect();
    if usable.len() < shots {
        return Err(Error::DomainPoolTooSmall {
            available: usable.len(),
            required: shots,
        });
    }
    let mut chosen: HashSet<&str> = HashSet::with_capacity(shots);
    let mut out = Vec::with_capacity(shots);
    while out.len() < shots {
        let candidate = &pool[rng.gen_range(0..pool.len())];
        let id = candidate.id();
        if taken.contains(id) || !chosen.insert(id) {
            continue;
        }
        out.push(candidate.clone());
    }
    Ok(out)
}

/// Consecutive batches of `m` episodes; the last may be shorter.
pub fn task_batches<T>(
    stream: &[Episode<T>],
    m: usize,
) -> Result<std::slice::Chunks<'_, Episode<T>>> {
    if m == 0 {
        return Err(Error::Config("tasks per batch must be >= 1".into()));
    }
    Ok(stream.chunks(m))
}

#[derive(Serialize)]
struct EpisodeRecord<'a> {
    episode: usize,
    support: Vec<&'a str>,
    query: Vec<&'a str>,
    domain_query: Vec<&'a str>,
}

/// Audit dump: one JSON object per episode with the sample ids of each set.
pub fn episodes_to_jsonl<T: Identified>(stream: &[Episode<T>]) -> String {
    let mut out = String::new();
    for (i, e) in stream.iter().enumerate() {
        let rec = EpisodeRecord {
            episode: i,
            support: Episode::ids(&e.support),
            query: Episode::ids(&e.query),
            domain_query: Episode::ids(&e.domain_query),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}
