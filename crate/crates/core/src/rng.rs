//! Seed derivation. Every stochastic step in the crate draws from a
//! `ChaCha8Rng` whose seed is a pure function of the run seed and a few
//! integer keys, so results never depend on call order or threading.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a list of keys.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k.wrapping_add(0x632b_e59b_d9b4_e019))))
}

pub fn rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, keys))
}
