//! Seeded PCG streams plus the few samplers the simulations need.
//!
//! Samplers are written out here rather than taken from a distributions
//! crate so the exact draw sequence is pinned and can be reproduced in
//! other languages from `(seed, stream)` alone.

use rand_core::Rng;
use rand_pcg::Pcg64;

/// Independent generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Pcg64 {
    let state = (u128::from(seed) << 64) | u128::from(seed ^ 0x9e37_79b9_7f4a_7c15);
    Pcg64::new(state, u128::from(stream))
}

/// Uniform on [0, 1) with 53 bits of precision.
pub fn unit(rng: &mut Pcg64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[lo, hi]`.
pub fn range_inclusive(rng: &mut Pcg64, lo: u64, hi: u64) -> u64 {
    debug_assert!(lo <= hi);
    let span = hi - lo + 1;
    lo + (unit(rng) * span as f64) as u64 % span
}

/// Standard normal via Box-Muller (cosine branch only).
pub fn normal(rng: &mut Pcg64) -> f64 {
    let u1 = 1.0 - unit(rng);
    let u2 = unit(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Exponential with the given mean, by inversion.
pub fn exponential(rng: &mut Pcg64, mean: f64) -> f64 {
    -mean * (1.0 - unit(rng)).ln()
}
