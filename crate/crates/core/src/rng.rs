//! Seed derivation: every random stream in a run is keyed off the run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::text::hash_term;

/// Deterministic sub-seed for a named purpose.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    hash_term(b's', purpose, seed)
}

pub fn rng_for(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}
