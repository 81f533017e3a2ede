//! The toolkit-wide pseudo-random generator.
//!
//! Every stochastic choice (pair sampling, identity subsets, fold shuffling)
//! draws from [`ToolkitRng`], a ChaCha8 stream seeded from a single `u64`.
//! ChaCha output is specified bit-for-bit and independent of platform and
//! word size, which makes the seed a complete description of the randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ToolkitRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> ToolkitRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent sub-stream of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ mix64(index)
}
