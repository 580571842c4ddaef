//! Seed derivation shared by every stochastic stage.
//!
//! All randomness flows from one 64-bit master seed. Sub-streams are derived
//! with [`mix`], which runs the SplitMix64 finalizer over
//! `seed + (stream + 1) * 0x9E3779B97F4A7C15` (wrapping arithmetic). The
//! derived value seeds a ChaCha8 generator, whose output is fixed across
//! platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `stream` from `seed`.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix64(seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream tags keep independent consumers of the master seed apart.
pub(crate) const STREAM_INIT: u64 = 0x1000;
pub(crate) const STREAM_BATCH: u64 = 0x2000;
pub(crate) const STREAM_DROPOUT: u64 = 0x3000;
pub(crate) const STREAM_FACTORS: u64 = 0x4000;
pub(crate) const STREAM_FOREST: u64 = 0x5000;
