//! The single pseudo-random generator used throughout the crate.
//!
//! Every random draw (parameter initialization, batch shuffling, masking,
//! synthetic audio) goes through [`SeededRng`], which wraps the ChaCha
//! stream cipher reduced to 8 rounds (`rand_chacha::ChaCha8Rng`). A `u64`
//! seed is expanded to the 256-bit key with `rand_core`'s `seed_from_u64`
//! (a PCG32 stream), so the sequence is fully determined by the seed and is
//! portable across platforms. Uniform floats are produced by `rand`'s
//! `StandardUniform`/`Uniform` samplers and normals by `rand_distr::StandardNormal`
//! (ziggurat).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from `seed` and a purpose tag, so that
    /// e.g. shuffling never perturbs initialization.
    pub fn derived(seed: u64, stream: &str) -> Self {
        let mut h: u64 = seed ^ 0x9e37_79b9_7f4a_7c15;
        for b in stream.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        Self::new(h)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        mean + std * z
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
