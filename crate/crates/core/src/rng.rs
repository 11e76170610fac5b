//! Seeded random number generation.
//!
//! Every random decision in the crate draws from [`SeededRng`], a ChaCha
//! stream cipher with 8 rounds. Its output is defined by the algorithm alone,
//! so a given seed produces the same splits on every platform. Independent
//! streams (per user, per epoch, per batch) are obtained with [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = mix64(base ^ 0x9e37_79b9_7f4a_7c15);
    for &p in path {
        h = mix64(h.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix64(p));
    }
    h
}
