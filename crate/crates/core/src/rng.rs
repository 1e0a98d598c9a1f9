//! Seed plumbing. Every stochastic routine takes an explicit `u64` seed and
//! derives independent sub-streams with [`derive`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `seed` with a stream tag (splitmix64 finalizer).
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless hash noise in `[-1, 1)` for pixel textures.
pub fn hash_noise(seed: u64, a: u64, b: u64) -> f64 {
    let h = derive(derive(seed, a), b);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}
