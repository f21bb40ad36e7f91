//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator addressed by `(seed, stream)`. Streams
//! are derived from a parent by hashing a key into a fresh stream id, so a
//! sweep can hand each `(scale, eta0, seed)` cell its own generator without
//! any shared state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngState {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// An independent stream keyed by `key`. Does not advance `self`.
    pub fn derive(&self, key: u64) -> RngState {
        let id = splitmix64(splitmix64(self.stream ^ 0xD1B5_4A32_D192_ED03) ^ splitmix64(key));
        RngState::with_stream(self.seed, id)
    }

    /// Stream keyed by a sequence of integers, e.g. `(scale, eta-index, seed)`.
    pub fn derive_path(&self, keys: &[u64]) -> RngState {
        keys.iter().fold(self.clone(), |r, &k| r.derive(k))
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// Matrix of i.i.d. `N(0, std²)` entries, filled row-major.
pub fn sample_gaussian(rng: &mut RngState, rows: usize, cols: usize, std: f64) -> Matrix {
    assert!(std >= 0.0, "sample_gaussian: negative std {std}");
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = std * rng.normal();
    }
    m
}

pub fn gaussian_vec(rng: &mut RngState, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.normal()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_is_zero() {
        let mut rng = RngState::new(1);
        let m = sample_gaussian(&mut rng, 4, 5, 0.0);
        assert!(m.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn same_seed_same_matrix() {
        let a = sample_gaussian(&mut RngState::new(42), 10, 10, 1.0);
        let b = sample_gaussian(&mut RngState::new(42), 10, 10, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn position_advances() {
        let mut rng = RngState::new(1);
        let p0 = rng.position();
        rng.normal();
        assert!(rng.position() > p0);
    }

    #[test]
    fn million_draw_moments() {
        let mut rng = RngState::new(2024);
        let n = 1_000_000;
        let m = sample_gaussian(&mut rng, 1000, 1000, 1.0);
        let mean = m.as_slice().iter().sum::<f64>() / n as f64;
        let var = m.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn distinct_seeds_are_uncorrelated() {
        let mut a = RngState::new(1);
        let mut b = RngState::new(2);
        let n = 100_000;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (x, y) = (a.normal(), b.normal());
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let rho = sab / (saa * sbb).sqrt();
        assert!(rho.abs() < 0.01, "rho {rho}");
    }

    #[test]
    fn derived_streams_differ_and_repeat() {
        let root = RngState::new(9);
        let mut a = root.derive(1);
        let mut b = root.derive(2);
        let mut a2 = root.derive_path(&[1]);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut a_again = root.derive(1);
        a_again.next_u64();
        a2.next_u64();
        assert_eq!(a_again.next_u64(), a2.next_u64());
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = RngState::new(3);
        let mut p = rng.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
