//! Deterministic, splittable random number generation.
//!
//! Every randomized operation in this crate takes a [`SeededRng`] (or a seed
//! it derives one from). The generator is counter-based (ChaCha8), so a
//! stream is fully determined by `(seed, stream, position)` and independent
//! substreams can be split off by label without consuming state from the
//! parent. That keeps pipelines reproducible even when stages are reordered
//! or run independently.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splittable seeded generator. Identical seed + call sequence gives an
/// identical stream; `split`/`split_str` derive independent child streams.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer; used to mix labels into child seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a; stable across platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream from a numeric label. Does not
    /// advance this stream.
    pub fn split(&self, label: u64) -> SeededRng {
        SeededRng::new(mix64(self.seed ^ mix64(label)))
    }

    /// Derive an independent child stream from a string label.
    pub fn split_str(&self, label: &str) -> SeededRng {
        self.split(hash_label(label))
    }

    /// Uniform in `[0, n)`.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index on empty range");
        self.inner.random_range(0..n)
    }

    /// Uniform in `[lo, hi]`.
    pub fn next_f64(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.inner.random_range(lo..hi)
    }

    /// Standard normal via rand_distr.
    pub fn next_gaussian(&mut self, sigma: f64) -> f64 {
        use rand_distr::{Distribution, Normal};
        Normal::new(0.0, sigma)
            .expect("sigma must be finite and non-negative")
            .sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle, in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }

    /// Raw state for checkpointing: (seed, stream, 128-bit word position).
    pub fn state(&self) -> (u64, u64, u128) {
        (self.seed, self.inner.get_stream(), self.inner.get_word_pos())
    }

    /// Restore a stream captured by [`SeededRng::state`].
    pub fn from_state(seed: u64, stream: u64, word_pos: u128) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        inner.set_word_pos(word_pos);
        Self { seed, inner }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
