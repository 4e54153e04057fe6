//! Platform-stable random streams.
//!
//! Every stochastic operation in the workbench draws from an [`RngStream`]:
//! a ChaCha8 generator keyed by a 64-bit seed and a 64-bit stream id. Two
//! streams with the same `(seed, stream_id)` yield the same sequence on any
//! platform, and child streams are derived by hashing, never by sharing state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to mix seeds and tags into new seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream keyed by `tag`. Independent of how much of `self` has
    /// been consumed.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream::new(mix64(self.seed ^ mix64(self.stream_id)), mix64(tag ^ 0xA5A5_5A5A_0F0F_F0F0))
    }

    /// Derive a seed from a base seed and a list of integer coordinates.
    pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
        parts.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
