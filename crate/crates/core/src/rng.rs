//! Seeded random streams.
//!
//! Every stochastic step (split shuffles, batch order, augmentation draws,
//! weight initialization, dropout masks) draws from SplitMix64 so that the
//! same seeds reproduce the same results in any language. The generator is
//! the reference SplitMix64 (Steele, Lea and Flood); with seed `1234567` its
//! first outputs are `6457827717110365317, 3203168211198807973, ...`.
//!
//! Derived conventions, which other implementations must follow to match:
//!
//! - `next_f64` = `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
//! - `below(n)` rejects raw draws `x < 2^64 mod n` and returns `x mod n`.
//! - `shuffle` is Fisher-Yates from the last index down, swapping `i` with
//!   `below(i + 1)`.
//! - `SeedStream::derive(seed, index)` seeds a fresh generator with
//!   `seed XOR first_output(SplitMix64(index))`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

/// A SplitMix64 stream with the documented sampling helpers.
#[derive(Debug, Clone)]
pub struct SeedStream {
    inner: SplitMix64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    /// Independent stream for item `index` under a base `seed`.
    pub fn derive(seed: u64, index: u64) -> Self {
        let salt = SplitMix64::seed_from_u64(index).next_u64();
        Self::new(seed ^ salt)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
