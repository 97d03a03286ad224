//! Seed derivation.
//!
//! Every random stream in a run is derived from the run seed with [`derive`],
//! using one of the fixed stream tags below, so that streams never alias and a
//! given `(seed, tag)` pair always yields the same generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every random stream.
pub type Rng = ChaCha8Rng;

/// Environment resets.
pub const STREAM_ENV: u64 = 0x01;
/// Network initialization.
pub const STREAM_INIT: u64 = 0x02;
/// Replay sampling for learner updates.
pub const STREAM_REPLAY: u64 = 0x03;
/// Projection matrix of the exploration-bonus / visitation hash.
pub const STREAM_EXPLORATION_HASH: u64 = 0x04;
/// Projection matrix of the information-matrix feature map.
pub const STREAM_CRITERION_HASH: u64 = 0x05;
/// Batches drawn for criterion checks.
pub const STREAM_CRITERION_BATCH: u64 = 0x06;
/// Action sampling (warmup and stochastic actors).
pub const STREAM_ACTION: u64 = 0x07;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for `stream` from `base`.
pub fn derive(base: u64, stream: u64) -> u64 {
    mix64(base ^ mix64(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Generator for `stream` of the run seeded with `base`.
pub fn rng(base: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive(base, stream))
}

/// FNV-1a over bytes; stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
