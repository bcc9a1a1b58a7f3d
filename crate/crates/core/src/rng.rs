//! Seeded random streams.
//!
//! Every chain owns a ChaCha8 generator (a counter-based cipher RNG) seeded
//! from a value derived with SplitMix64 from `(base_seed, stream)`. Streams are
//! therefore reproducible individually, independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `stream` under `base_seed`.
pub fn derive_seed(base_seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base_seed) ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn rng_from_seed(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stream `stream` under `base_seed`.
pub fn stream(base_seed: u64, stream: u64) -> ChainRng {
    rng_from_seed(derive_seed(base_seed, stream))
}
