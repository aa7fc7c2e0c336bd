//! Seed plumbing. Every random draw in the toolkit starts from a `u64` seed and
//! a ChaCha8 stream, so results are reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed `i` of `seed`. Distinct `i` give independent-looking streams.
pub fn derive(seed: u64, i: u64) -> u64 {
    mix64(seed ^ mix64(i.wrapping_add(0x5851_f42d_4c95_7f2d)))
}
