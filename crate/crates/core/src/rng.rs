//! Seeded randomness with a fully documented, platform-independent float path.
//!
//! All randomness in the crate is drawn from `ChaCha8Rng` streams. Integer
//! draws are turned into floats and indices by the functions below, which use
//! only IEEE-754 basic operations plus `libm` (a pure Rust libm port), so the
//! same seed yields the same bits on every target.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `stream` from `seed`:
/// `splitmix64(seed ^ splitmix64(stream))`.
///
/// Used for per-adapter and per-shard training seeds. The result depends on
/// nothing but the two arguments.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Uniform in `[0, 1)` with 53 bits of precision.
pub fn uniform(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by the Box-Muller transform (cosine branch only, one
/// normal per two uniforms).
pub fn gaussian(rng: &mut Rng) -> f64 {
    let u1 = 1.0 - uniform(rng); // (0, 1]
    let u2 = uniform(rng);
    let r = libm::sqrt(-2.0 * libm::log(u1));
    r * libm::cos(2.0 * std::f64::consts::PI * u2)
}

/// Uniform index in `[0, bound)` by rejection sampling on 64-bit draws.
pub fn below(rng: &mut Rng, bound: usize) -> usize {
    assert!(bound > 0, "below() with zero bound");
    let bound = bound as u64;
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % bound) as usize;
        }
    }
}

/// Fisher-Yates shuffle, walking from the back.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// `count` distinct indices from `0..population`, in draw order.
pub fn sample_without_replacement(rng: &mut Rng, population: usize, count: usize) -> Vec<usize> {
    assert!(count <= population);
    let mut pool: Vec<usize> = (0..population).collect();
    for i in 0..count {
        let j = i + below(rng, population - i);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}
