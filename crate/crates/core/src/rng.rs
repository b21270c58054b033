//! Seeded random streams.
//!
//! ChaCha20 is counter based, so a `(seed, stream)` pair always yields the
//! same sequence regardless of how work is split across threads.

use num_complex::Complex64;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> SeededRng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[inline]
pub fn normal<R: RngCore>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Circularly-symmetric complex Gaussian with unit variance.
#[inline]
pub fn complex_normal<R: RngCore>(rng: &mut R) -> Complex64 {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(normal(rng) * s, normal(rng) * s)
}

/// Uniform draw in `[0, 1)`.
#[inline]
pub fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A fresh 63-bit seed, small enough for formats that store signed
/// 64-bit integers.
#[inline]
pub fn child_seed<R: RngCore>(rng: &mut R) -> u64 {
    rng.next_u64() >> 1
}
