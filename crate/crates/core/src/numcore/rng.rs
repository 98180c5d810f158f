//! Seedable counter-based random stream.
//!
//! A stream is fully described by `(seed, counter)`: the counter is the
//! ChaCha8 word position, so two streams with equal seed and counter emit the
//! same values on every platform. Independent substreams are derived by
//! hashing a domain tag into a fresh seed, which keeps parallel or reordered
//! work reproducible.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use super::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Restores a stream at an exact position.
    pub fn at(seed: u64, counter: u64) -> Self {
        let mut s = Self::new(seed);
        s.inner.set_word_pos(counter as u128);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.inner.get_word_pos() as u64
    }

    /// Seed of the substream named `tag`; independent of the current counter.
    pub fn derive_seed(&self, tag: &str) -> u64 {
        derive_seed(self.seed, tag, None)
    }

    pub fn derive(&self, tag: &str) -> RngStream {
        RngStream::new(self.derive_seed(tag))
    }

    pub fn derive_indexed(&self, tag: &str, index: u64) -> RngStream {
        RngStream::new(derive_seed(self.seed, tag, Some(index)))
    }

    pub fn derive_indexed_seed(&self, tag: &str, index: u64) -> u64 {
        derive_seed(self.seed, tag, Some(index))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on two uniforms (cosine branch only).
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_f64()).collect()
    }

    pub fn gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_gaussian()).collect()
    }

    pub fn uniform_in<T: Scalar>(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * T::of(self.next_f64())
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire-style multiply-shift; bias is negligible for n << 2^64.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn derive_seed(seed: u64, tag: &str, index: Option<u64>) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    match index {
        Some(i) => {
            h.update([1u8]);
            h.update(i.to_le_bytes());
        }
        None => h.update([0u8]),
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
