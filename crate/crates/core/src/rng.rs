//! Seed derivation shared by every randomized step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for [`derive_seed`]. Each randomized stage of the
/// pipeline draws from its own stream so that adding or removing a stage does
/// not shift the randomness seen by the others.
pub mod stream {
    /// Prequantization k-means.
    pub const PREQUANT: u64 = 1;
    /// Random channel ranking.
    pub const RANDOM_IMPORTANCE: u64 = 2;
    /// Basic codebook k-means.
    pub const BASIC: u64 = 3;
    /// Extended codebook `t` uses `EXTENDED + t`.
    pub const EXTENDED: u64 = 16;
    /// Synthetic calibration activations.
    pub const CALIBRATION: u64 = 1024;
}

/// SplitMix64 finalizer over `seed` and `stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator used throughout the crate.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
