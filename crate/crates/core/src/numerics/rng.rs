//! Counter-based random number generation.
//!
//! A draw is a pure function of `(seed, stream_id, counter)`: the state names
//! a position in a ChaCha8 keystream and sampling advances the counter by a
//! deterministic amount that depends only on how many values were asked for.
//! That buys replayability (a checkpointed counter resumes the exact stream),
//! collision-free parallel streams (distinct `stream_id`s key distinct
//! keystreams), and zero global state.

use ndarray::Array2;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Batch;
use crate::Real;

/// Position in a deterministic random stream.
///
/// `seed` selects the experiment, `stream_id` the substream within it (for
/// example: data sampling vs. time sampling), `counter` the offset. Copy
/// semantics are deliberate; functions that consume randomness take
/// `&mut RngState` and advance only the counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl RngState {
    /// Stream start: counter zero.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            seed,
            stream_id,
            counter: 0,
        }
    }

    /// A fresh stream under the same seed, starting at counter zero.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    /// The keyed generator positioned at `counter`.
    ///
    /// ChaCha counts in 32-bit words; one `next_u64` consumes two words. The
    /// `RngState` counter is exactly the ChaCha word position.
    fn cipher(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream_id.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_word_pos(self.counter as u128);
        rng
    }
}

/// Uniform in `[0, 1)` with 53 random bits.
fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `(0, 1)`, strictly interior so `ln` is safe.
fn open_unit_from_bits(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 / ((1u64 << 53) as f64 + 1.0)
}

/// `n` independent `U[0, 1)` draws. Advances the counter by `2 n` words.
pub fn sample_uniform<T: Real>(rng: &mut RngState, n: usize) -> Vec<T> {
    let mut cipher = rng.cipher();
    let out = (0..n)
        .map(|_| T::of(unit_from_bits(cipher.next_u64())))
        .collect();
    rng.counter = cipher.get_word_pos() as u64;
    out
}

/// An `n x d` batch of independent standard normal draws.
///
/// Box-Muller with fixed consumption: every pair of outputs costs exactly two
/// `u64`s, so the counter advances by `4 * ceil(n d / 2)` words regardless of
/// the values drawn. (A rejection sampler would make the advance
/// data-dependent and break counter arithmetic for parallel streams.)
pub fn sample_std_normal<T: Real>(rng: &mut RngState, n: usize, d: usize) -> Batch<T> {
    assert!(n >= 1 && d >= 1, "batch shape must be positive");
    let mut cipher = rng.cipher();
    let total = n * d;
    let mut values = Vec::with_capacity(total);
    while values.len() < total {
        let u1 = open_unit_from_bits(cipher.next_u64());
        let u2 = unit_from_bits(cipher.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        values.push(T::of(r * theta.cos()));
        if values.len() < total {
            values.push(T::of(r * theta.sin()));
        }
    }
    rng.counter = cipher.get_word_pos() as u64;
    let data = Array2::from_shape_vec((n, d), values).expect("shape matches length");
    Batch::from_array_unchecked(data)
}
