//! Seed derivation for independent, reproducible random streams.
//!
//! Every consumer of randomness (noise injection, alterations, dropout,
//! shuffling, initialization) gets its own stream derived from a base seed
//! plus a purpose tag and indices, so changing the order in which streams are
//! consumed never perturbs another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a of a string.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Folds `parts` into `base`, order-sensitively.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, p| mix64(acc ^ mix64(*p)))
}

/// A ChaCha stream for `(base, tag, parts…)`.
pub fn stream(base: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut all = Vec::with_capacity(parts.len() + 1);
    all.push(hash_str(tag));
    all.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(derive_seed(base, &all))
}
