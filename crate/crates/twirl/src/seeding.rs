//! Named RNG streams derived from a single base seed.
//!
//! Every source of randomness in a run pulls from its own stream so that,
//! e.g., changing the evaluation episode count cannot perturb training.
//! The split function is SHA-256(base_seed_le || 0x00 || stream name) used
//! as a ChaCha8 key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Episode resets and in-episode environment randomness, plus exploration
/// action noise.
pub const STREAM_ENV: &str = "env";
/// Network weight initialization.
pub const STREAM_POLICY_INIT: &str = "policy-init";
/// Dropout masks and reparameterization noise during updates.
pub const STREAM_DROPOUT: &str = "dropout";
/// Replay batch index draws.
pub const STREAM_SAMPLER: &str = "sampler";
/// Evaluation episodes.
pub const STREAM_EVAL: &str = "eval";
/// Source-data collection rollouts (kept apart from "env" so a transfer run
/// and a from-scratch run see identical training episodes).
pub const STREAM_COLLECT: &str = "collect";

pub fn stream(base_seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update([0u8]);
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// An indexed sub-stream, e.g. one per evaluation episode.
pub fn indexed_stream(base_seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    stream(base_seed, &format!("{name}/{index}"))
}
