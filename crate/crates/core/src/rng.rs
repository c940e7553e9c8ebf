//! Counter-addressed random numbers.
//!
//! Every draw is a pure function of `(seed, stream, index)`: the stream is the
//! ChaCha stream id (used for the replication index) and the index selects a
//! fixed four-word window inside that stream (used for the coordinate).
//! Draws are therefore independent of iteration order, and a contiguous block
//! read sequentially yields the same values as per-index access.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const WORDS_PER_DRAW: u128 = 4;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent generator for a named purpose (design, noise, ...).
    pub fn domain(&self, tag: &str) -> Self {
        let mut h = self.seed;
        for b in tag.bytes() {
            h = mix64(h ^ u64::from(b));
        }
        Self { seed: mix64(h) }
    }

    fn cursor(&self, stream: u64, index: u64) -> Cursor {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from(index) * WORDS_PER_DRAW);
        Cursor { rng }
    }

    pub fn uniform(&self, stream: u64, index: u64) -> f64 {
        self.cursor(stream, index).uniform()
    }

    pub fn normal(&self, stream: u64, index: u64) -> f64 {
        self.cursor(stream, index).normal()
    }

    /// Standard normals for indices `start, start + 1, ...`.
    pub fn fill_normal(&self, stream: u64, start: u64, out: &mut [f64]) {
        let mut c = self.cursor(stream, start);
        for v in out.iter_mut() {
            *v = c.normal();
        }
    }

    /// Uniforms on [0, 1) for indices `start, start + 1, ...`.
    pub fn fill_uniform(&self, stream: u64, start: u64, out: &mut [f64]) {
        let mut c = self.cursor(stream, start);
        for v in out.iter_mut() {
            *v = c.uniform();
        }
    }

    /// Random signs (±1) for indices `start, start + 1, ...`.
    pub fn fill_sign(&self, stream: u64, start: u64, out: &mut [f64]) {
        let mut c = self.cursor(stream, start);
        for v in out.iter_mut() {
            *v = if c.uniform() < 0.5 { -1.0 } else { 1.0 };
        }
    }
}

struct Cursor {
    rng: ChaCha8Rng,
}

impl Cursor {
    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    // Each draw consumes exactly four 32-bit words.
    fn uniform(&mut self) -> f64 {
        let u = self.unit();
        self.rng.next_u64();
        u
    }

    fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
