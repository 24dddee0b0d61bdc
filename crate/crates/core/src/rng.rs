//! Seeded random streams.
//!
//! Every random decision in the crate draws from [`SeededRng`], a ChaCha8
//! stream keyed by a 64-bit seed (`ChaCha8Rng::seed_from_u64`). Only the raw
//! `next_u64` output of the stream is consumed; integer and float draws are
//! derived here so the mapping from seed to decisions does not depend on the
//! distribution code of any particular `rand` release:
//!
//! * `below(n)`: Lemire's multiply-shift with rejection, unbiased.
//! * `unit()`: top 53 bits of one `u64` scaled by 2^-53, in `[0, 1)`.
//! * `shuffle_prefix(xs, k)`: the first `k` steps of a forward Fisher-Yates
//!   pass, swapping `xs[i]` with `xs[i + below(len - i)]`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Stream tags keep independent uses of one user seed apart.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Episode = 1,
    Corruption = 2,
    Init = 3,
    Synthetic = 4,
    PrototypeInit = 5,
}

pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn for_stream(seed: u64, stream: Stream) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream as u64);
        Self { inner }
    }

    /// A stream tied to a string key: the ChaCha8 key is the SHA-256 of
    /// `seed` (little endian), the stream tag and the key bytes.
    pub(crate) fn keyed(seed: u64, stream: Stream, key: &str) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update((stream as u64).to_le_bytes());
        h.update(key.as_bytes());
        Self {
            inner: ChaCha8Rng::from_seed(h.finalize().into()),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-scale, scale)`.
    pub fn symmetric(&mut self, scale: f64) -> f64 {
        (2.0 * self.unit() - 1.0) * scale
    }

    pub fn shuffle_prefix<T>(&mut self, xs: &mut [T], k: usize) {
        let len = xs.len();
        for i in 0..k.min(len) {
            let j = i + self.below((len - i) as u64) as usize;
            xs.swap(i, j);
        }
    }

    pub(crate) fn chacha(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}
