//! Named, seeded random streams.
//!
//! Each stream is a ChaCha20 generator keyed by
//! `SHA-256(seed as 8 little-endian bytes || name as UTF-8)`. Uniform values
//! take the top 53 bits of a `u64` draw; Gaussian values use the Box–Muller
//! transform and consume both outputs of each pair in order (cosine first).
//! Both ChaCha20 and SHA-256 are platform independent, so a given
//! `(seed, name)` yields the same sequence everywhere.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use super::{Matrix, Real};

/// Root of a family of named streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh stream for `name`; streams with different names are independent.
    pub fn stream(&self, name: &str) -> Stream {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        Stream {
            inner: ChaCha20Rng::from_seed(key),
            spare: None,
        }
    }
}

pub struct Stream {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (slight modulo bias is irrelevant here).
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// `rows × cols` matrix of `N(0, scale²)` entries, filled row-major.
    pub fn normal_matrix<T: Real>(&mut self, rows: usize, cols: usize, scale: f64) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| T::from_f64_lossy(scale * self.normal()))
    }
}
