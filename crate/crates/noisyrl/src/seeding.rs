//! Deterministic RNG derivation.
//!
//! Every stochastic component draws from a `ChaCha8Rng` derived from the
//! experiment's master seed plus a path of integer tags (iteration, task
//! index, rollout index, ...). Two runs with the same master seed therefore
//! produce identical streams regardless of worker scheduling, which is what
//! makes parallel rollouts reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a tag path.
///
/// The derivation is a chained SplitMix64 over the path elements, so
/// `derive_seed(s, &[a, b])` differs from `derive_seed(s, &[b, a])` and from
/// `derive_seed(s, &[a])`.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    let mut state = mix(root ^ 0x6e6f_6973_7972_6c00); // crate-specific salt
    for (depth, tag) in path.iter().enumerate() {
        state = mix(state ^ mix(tag.wrapping_add(depth as u64 + 1)));
    }
    state
}

/// A seeded RNG for the given tag path.
pub fn rng_for(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

/// Stream tags for the top-level phases, kept in one place so seed
/// derivations never collide across subsystems.
pub mod tags {
    pub const DOMAIN: u64 = 1;
    pub const TASK: u64 = 2;
    pub const EPISODE: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const INIT: u64 = 7;
}
