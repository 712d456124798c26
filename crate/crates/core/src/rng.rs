//! Deterministic, stream-addressable randomness.
//!
//! Every random decision in the crate draws from a [`Stream`] whose seed is a
//! pure function of `(root seed, salt, indices...)`. Independent streams make
//! generation order-free: cells of a dataset, runs of an experiment, and
//! epochs of a trainer can be produced in any order (or in parallel) without
//! changing a single output byte.
//!
//! Floats are derived from the raw 64-bit ChaCha output with fixed mappings
//! rather than through distribution crates, so the byte-level behaviour is
//! pinned by this file alone.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Salts keeping unrelated consumers of the same root seed independent.
pub mod salt {
    pub const DATASET_CELL: u64 = 0x01;
    pub const ASSIGNMENT: u64 = 0x02;
    pub const SUBSAMPLE: u64 = 0x03;
    pub const CARVE: u64 = 0x04;
    pub const INIT: u64 = 0x05;
    pub const SHUFFLE: u64 = 0x06;
    pub const AUGMENT: u64 = 0x07;
    pub const ORDER: u64 = 0x08;
}

/// SplitMix64 finalizer; mixes one word into the running state.
fn splitmix(state: u64, word: u64) -> u64 {
    let mut z = state
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(word.wrapping_mul(0xff51afd7ed558ccd));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Collapses `(seed, salt, indices...)` into one stream seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f6a8885a308d3, |acc, &p| splitmix(acc, p))
}

/// One independent random stream (ChaCha8 keyed by a mixed seed).
pub struct Stream {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn from_parts(parts: &[u64]) -> Self {
        Stream {
            rng: ChaCha8Rng::seed_from_u64(mix(parts)),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller (caches the spare draw).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u1 = self.uniform();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2 = self.uniform();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            self.spare_normal = Some(r * theta.sin());
            return r * theta.cos();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct positions sampled from `0..n`, returned sorted.
    pub fn choose_sorted(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}
