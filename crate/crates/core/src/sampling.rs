//! Seeded random streams. Identical seeds give identical streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;

/// A deterministic sampler. Not `Sync`-shared; give each thread its own.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream keyed by `(seed, stream)`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { inner }
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn rademacher(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.gaussian())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform(lo, hi))
    }

    pub fn rademacher_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.rademacher())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        assert_eq!(a.gaussian_matrix(3, 3), b.gaussian_matrix(3, 3));
        assert_eq!(a.uniform(0.0, 1.0).to_bits(), b.uniform(0.0, 1.0).to_bits());
    }

    #[test]
    fn streams_differ() {
        let mut a = SeededRng::with_stream(42, 0);
        let mut b = SeededRng::with_stream(42, 1);
        assert_ne!(a.gaussian_matrix(2, 2), b.gaussian_matrix(2, 2));
    }

    #[test]
    fn rademacher_is_plus_minus_one() {
        let mut r = SeededRng::new(1);
        let m = r.rademacher_matrix(20, 20);
        assert!(m.as_slice().iter().all(|v| *v == 1.0 || *v == -1.0));
        let mean = m.sum() / 400.0;
        assert!(mean.abs() < 0.2);
    }

    #[test]
    fn uniform_in_range() {
        let mut r = SeededRng::new(9);
        let m = r.uniform_matrix(50, 50, -0.5, 0.25);
        assert!(m.as_slice().iter().all(|v| (-0.5..0.25).contains(v)));
    }
}
