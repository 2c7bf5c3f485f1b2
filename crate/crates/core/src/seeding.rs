//! Deterministic seed derivation.
//!
//! Every random decision in the crate draws from a [`ChaCha8Rng`] seeded
//! through these helpers, so one master seed pins scene generation,
//! training batches, sampling jitter, and RANSAC. Derived streams are
//! decorrelated by mixing a string tag and context words through a
//! splitmix64-style finalizer, which keeps results independent of
//! evaluation order (per-ray and per-pixel streams can be drawn in any
//! order, or in parallel, without changing the output).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer: a cheap avalanche permutation on 64 bits.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of context words into a new 64-bit seed.
pub fn mix(seed: u64, words: &[u64]) -> u64 {
    let mut state = splitmix(seed);
    for &w in words {
        state = splitmix(state ^ w);
    }
    state
}

/// Hashes a short tag string into a 64-bit word (FNV-1a).
pub fn tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A ChaCha stream for `(master seed, tag, context words)`.
///
/// The tag names the purpose ("ransac", "train-batch", ...) and the words
/// identify the instance (iteration index, pixel coordinate, ...).
pub fn stream_rng(master: u64, name: &str, words: &[u64]) -> ChaCha8Rng {
    let mut s = mix(master, &[tag(name)]);
    s = mix(s, words);
    ChaCha8Rng::seed_from_u64(s)
}
