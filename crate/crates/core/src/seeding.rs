//! Reproducible RNG streams keyed by a base seed and a pair identifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used everywhere randomness must be reproducible.
pub type StreamRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, key, index)`. The mapping is stable across
/// platforms and releases.
pub fn stream_rng(seed: u64, key: &str, index: u64) -> StreamRng {
    let mut h = fnv1a(key.as_bytes());
    h ^= index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut seed_bytes = [0u8; 32];
    seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
    seed_bytes[8..16].copy_from_slice(&h.to_le_bytes());
    seed_bytes[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed_bytes)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
