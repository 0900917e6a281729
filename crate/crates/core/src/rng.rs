//! Seeded random streams.
//!
//! Every consumer draws from a ChaCha8 stream selected by `(seed, tag)`, so
//! adding draws in one place never shifts the numbers seen elsewhere.
//! Normals use Box–Muller rather than a library sampler so the sequence is
//! pinned to this file.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;

/// Stream tags. Distinct consumers must use distinct tags.
pub mod tags {
    pub const SEMI_ORTHOGONAL: u64 = 1;
    pub const MIXTURE_MEANS: u64 = 2;
    pub const MIXTURE_NOISE: u64 = 3;
    pub const LAYER_INIT: u64 = 4;
    pub const HEAD_INIT: u64 = 5;
    pub const BATCHES: u64 = 6;
    pub const RRELU: u64 = 7;
    pub const LOWRANK: u64 = 8;
    pub const GAUSSIAN_INIT: u64 = 9;
    pub const GRADIENT_BATCH: u64 = 10;
    pub const TEST: u64 = 1000;
}

pub struct SeededRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

/// SplitMix64 finalizer of `seed + index`, for per-epoch or per-trial
/// sub-seeds that do not collide for nearby indices.
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64) -> SeededRng {
    let mut inner = ChaCha8Rng::seed_from_u64(seed);
    inner.set_stream(tag);
    SeededRng { inner, spare: None }
}

impl SeededRng {
    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.normal())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform_range(lo, hi))
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
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_repeatable() {
        let a: Vec<f64> = (0..4)
            .map({
                let mut r = stream(3, 1);
                move |_| r.uniform()
            })
            .collect();
        let b: Vec<f64> = (0..4)
            .map({
                let mut r = stream(3, 1);
                move |_| r.uniform()
            })
            .collect();
        let c: Vec<f64> = (0..4)
            .map({
                let mut r = stream(3, 2);
                move |_| r.uniform()
            })
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn normal_moments() {
        let mut r = stream(11, tags::TEST);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn permutation_is_bijective() {
        let mut p = stream(5, tags::TEST).permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
