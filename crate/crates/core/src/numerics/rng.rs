//! Seedable PRNG: xoshiro256++ whose state is expanded from a 64-bit seed
//! with splitmix64.
//!
//! Child streams are derived, never split off by consuming the parent:
//! `derive(tag)` seeds a fresh generator from `splitmix64(seed ^ splitmix64(tag))`.
//! A derived stream therefore depends only on the parent's seed and the tag,
//! so work scheduled in any order sees the same numbers.

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{Scalar, Tensor};

/// One round of the splitmix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `tag`.
    pub fn derive(&self, tag: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(tag)))
    }

    /// Child stream identified by a pair of tags, e.g. `(epoch, sample)`.
    pub fn derive2(&self, a: u64, b: u64) -> Rng {
        self.derive(a).derive(b)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw by the Box–Muller transform (cosine branch only,
    /// two uniforms per draw).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn uniform_tensor<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::lit(self.uniform()))
    }

    pub fn gaussian_tensor<S: Scalar>(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::lit(mean + std * self.gaussian()))
    }
}
