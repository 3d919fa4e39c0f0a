//! Keyed random streams. Every stochastic draw in training derives its
//! generator from a tuple of integers, so results do not depend on the order
//! or grouping in which samples are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds the key parts into one 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5C0E_C1A5_EED0_0001, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

/// Generator for one augmented view of one sample.
pub fn sample_stream(seed: u64, epoch: usize, index: usize, view: usize) -> ChaCha8Rng {
    stream(&[seed, epoch as u64, index as u64, view as u64])
}
