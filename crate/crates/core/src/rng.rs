//! Seeded random streams.
//!
//! Every stochastic component draws from xoshiro256++ seeded through
//! SplitMix64 (`seed_from_u64`). Independent streams come from repeated
//! `jump()` calls (2^128 steps apart), so a single 64-bit seed fixes every
//! draw of a run.

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// `n` non-overlapping streams derived from `seed`.
pub fn streams(seed: u64, n: usize) -> Vec<Rng> {
    let mut base = seeded(seed);
    (0..n)
        .map(|_| {
            let s = base.clone();
            base.jump();
            s
        })
        .collect()
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Normal with standard deviation `std`, resampled outside ±2σ.
pub fn trunc_normal(rng: &mut Rng, std: f64) -> f64 {
    loop {
        let z = normal(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
