//! Deterministic random streams.
//!
//! Generator: ChaCha20 (counter based). A `(seed, stream)` pair selects an
//! independent keystream; the 64-bit seed is expanded to the 256-bit key via
//! `SeedableRng::seed_from_u64`. Normals use the Ziggurat sampler of
//! `rand_distr::StandardNormal`. Given the same pair, every platform produces
//! the same sequence.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `[lo, hi)`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..hi)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Sample `count` distinct indices from `0..n` (order of selection kept).
    pub fn choose_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, count.min(n)).into_vec()
    }
}
