//! Deterministic RNG plumbing.
//!
//! Every stochastic component takes an explicit seed and derives its own
//! stream, so independent parts of a run (model init, batch sampling, the
//! jitter streams) never share state and experiment runs stay reproducible
//! bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag for model weight initialization.
pub const STREAM_MODEL_INIT: u64 = 1;
/// Stream tag for the domain-stratified batch sampler.
pub const STREAM_SAMPLER: u64 = 2;
/// Stream tag for the main feature-jitter augmentation stream.
pub const STREAM_JITTER_PHI: u64 = 3;
/// Stream tag for the optional auxiliary jitter stream.
pub const STREAM_JITTER_AUX: u64 = 4;

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
///
/// The mapping is fixed: tests that re-derive a run's batches or init
/// parameters rely on it.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible RNG for the given seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(7, STREAM_MODEL_INIT);
        let b = derive_seed(7, STREAM_SAMPLER);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, STREAM_MODEL_INIT));
    }

    #[test]
    fn seeded_rng_is_reproducible() {
        use rand::Rng;
        let mut r1 = seeded_rng(42);
        let mut r2 = seeded_rng(42);
        let x1: [u64; 4] = std::array::from_fn(|_| r1.random());
        let x2: [u64; 4] = std::array::from_fn(|_| r2.random());
        assert_eq!(x1, x2);
    }
}
