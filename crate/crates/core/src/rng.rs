//! Seed plumbing. Every stochastic step takes an explicit `u64` seed and
//! expands it into a ChaCha stream, so results never depend on call order
//! elsewhere in the program.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a parent seed and a stream tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Derives a child seed from a string label (account numbers, file names).
pub fn derive_str(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(derive(seed, label.len() as u64), |acc, b| derive(acc, b as u64))
}
