//! Portable random source for anything that must be reproducible outside
//! this crate (submission sampling).
//!
//! The stream is SplitMix64 with the state initialised to the seed. Bounded
//! integers use rejection sampling: with `t = (2^64 - r) mod r`, draws below
//! `t` are discarded and the result is `x mod r`. Index sampling is a partial
//! Fisher-Yates shuffle: for `i in 0..n`, swap slot `i` with slot
//! `i + bounded(len - i)`; the first `n` slots are the sample.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct PortableRng {
    inner: SplitMix64,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Unbiased integer in `0..range`.
    pub fn bounded(&mut self, range: u64) -> u64 {
        assert!(range > 0, "empty range");
        let threshold = range.wrapping_neg() % range;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % range;
            }
        }
    }

    /// `n` distinct indices from `0..len`, in draw order.
    pub fn sample_indices(&mut self, len: usize, n: usize) -> Vec<usize> {
        let n = n.min(len);
        let mut slots: Vec<usize> = (0..len).collect();
        for i in 0..n {
            let j = i + self.bounded((len - i) as u64) as usize;
            slots.swap(i, j);
        }
        slots.truncate(n);
        slots
    }
}
