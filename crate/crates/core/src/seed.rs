//! Counter-based randomness.
//!
//! Everything stochastic in the crate is keyed on explicit integers so that
//! results never depend on call order, batch composition, or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes an ordered tuple of keys into one well-mixed 64-bit value.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &k| splitmix(acc ^ splitmix(k)))
}

/// Uniform sample in `[0, 1)` derived from the keys.
pub fn unit(keys: &[u64]) -> f64 {
    (mix(keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A stream RNG for sequential sampling, seeded from the keys.
pub fn rng(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(keys))
}

/// Fixed stream tags so distinct uses of one user seed never collide.
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const NSP: u64 = 3;
    pub const MASK: u64 = 4;
    pub const ORDER: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const HEAD_INIT: u64 = 8;
}
