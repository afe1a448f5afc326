//! Seeded randomness. Every stochastic choice in the engine (random
//! image init, tiny-backend weights, seeded fallback weights) flows
//! through a ChaCha stream keyed by a caller-supplied `u64`, so equal
//! seeds reproduce bit-identical runs on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample in `[0, 1)` as `f64`; cast at the call site.
#[inline]
pub fn unit(rng: &mut SeededRng) -> f64 {
    rng.random::<f64>()
}

/// Uniform sample in `(-bound, bound)`.
#[inline]
pub fn symmetric(rng: &mut SeededRng, bound: f64) -> f64 {
    (rng.random::<f64>() * 2.0 - 1.0) * bound
}
