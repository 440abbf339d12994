//! Deterministic derivation of independent RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A ChaCha stream for `(base, path...)`.
pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    let seed = path.iter().fold(base, |acc, &p| derive_seed(acc, p));
    ChaCha8Rng::seed_from_u64(seed)
}
