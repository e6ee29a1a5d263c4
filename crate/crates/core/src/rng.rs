//! Portable sampling stream.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(seed)`. Every draw consumes exactly one `next_u64()` and
//! keeps its top 53 bits: `u = (w >> 11) · 2⁻⁵³ ∈ [0, 1)`. Categorical draws
//! invert the CDF with that single uniform, and shuffles are Fisher-Yates
//! from the back with `j = ⌊u · (i + 1)⌋`. Any implementation of ChaCha20
//! with the same seeding reproduces the same datasets.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct SampleRng {
    inner: ChaCha20Rng,
}

impl SampleRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Smallest index whose cumulative probability exceeds one uniform
    /// draw. Rounding slack at the top falls on the last arm with mass.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = ((self.uniform() * (i + 1) as f64) as usize).min(i);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a: Vec<f64> = {
            let mut r = SampleRng::new(7);
            (0..5).map(|_| r.uniform()).collect()
        };
        let mut r = SampleRng::new(7);
        let b: Vec<f64> = (0..5).map(|_| r.uniform()).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|u| (0.0..1.0).contains(u)));
    }

    #[test]
    fn categorical_skips_zero_mass() {
        let mut r = SampleRng::new(1);
        for _ in 0..1000 {
            assert_eq!(r.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut r = SampleRng::new(3);
        let mut v: Vec<usize> = (0..100).collect();
        r.shuffle(&mut v);
        let mut s = v.clone();
        s.sort();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
