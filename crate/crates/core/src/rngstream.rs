//! Deterministic RNG streams, keyed by (seed, purpose, index).
//!
//! Every random draw in the crate flows through one of these streams so a
//! (seed, config) pair pins the full trajectory bit-for-bit, and a training
//! run can be resumed mid-way by rebuilding the per-step stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub const TAG_WORLD: u64 = 1;
pub const TAG_EXTRACTOR_INIT: u64 = 2;
pub const TAG_TRAIN_STEP: u64 = 3;
pub const TAG_EVAL_PAIRS: u64 = 4;
pub const TAG_PCA_START: u64 = 5;

pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}
