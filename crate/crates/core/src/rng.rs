//! Seedable counter-based randomness.
//!
//! An [`Rng`] is a `(seed, stream)` pair naming a ChaCha8 keystream. Batch
//! element `b` always draws from stream `stream + b`, and within a stream the
//! draw for neuron `i` at step `t` sits at word `t * n + i`. Any draw can be
//! located without replaying earlier ones, so results do not depend on how
//! work is split across threads, and a batch-of-one run on stream
//! `stream + b` reproduces row `b` of a batched run.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SnnError};
use crate::scalar::Real;
use crate::tensor::BatchedTensor;

const U32_SCALE: f64 = 1.0 / 4_294_967_296.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rng {
    seed: u64,
    stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Rng { stream, ..self }
    }

    /// The generator whose batch element 0 is this generator's element `k`.
    pub fn offset(self, k: u64) -> Self {
        self.with_stream(self.stream.wrapping_add(k))
    }

    /// An independent generator for a different purpose (weights, shuffling, ...).
    pub fn fork(self, tag: u64) -> Self {
        Rng {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5eed))),
            stream: 0,
        }
    }

    /// Sequential generator over the keystream of lane `stream + lane`.
    pub fn generator(&self, lane: u64) -> ChaCha8Rng {
        let mut g = ChaCha8Rng::seed_from_u64(self.seed);
        g.set_stream(self.stream.wrapping_add(lane));
        g
    }

    /// Generator positioned at the first word of `row` for rows `width` words wide.
    pub fn positioned(&self, lane: u64, row: u64, width: usize) -> ChaCha8Rng {
        let mut g = self.generator(lane);
        g.set_word_pos(row as u128 * width as u128);
        g
    }

    pub(crate) fn unit(g: &mut ChaCha8Rng) -> f64 {
        g.next_u32() as f64 * U32_SCALE
    }
}

/// Draws one Bernoulli row: `out[i] = 1` with probability `p(i)`.
///
/// `row` is the step index; each row occupies `out.len()` keystream words.
pub(crate) fn bernoulli_row<T: Real>(
    rng: &Rng,
    lane: u64,
    row: u64,
    p: impl Fn(usize) -> f64,
    out: &mut [T],
) {
    let mut g = rng.positioned(lane, row, out.len());
    for (i, o) in out.iter_mut().enumerate() {
        let u = Rng::unit(&mut g);
        *o = if u < p(i) { T::one() } else { T::zero() };
    }
}

pub(crate) fn check_probabilities<T: Real>(p: &[T]) -> Result<()> {
    if let Some((idx, bad)) = p
        .iter()
        .enumerate()
        .find(|(_, &x)| !(x >= T::zero() && x <= T::one()))
    {
        return Err(SnnError::Domain(format!(
            "probability {bad} at index {idx} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Independent Bernoulli draws for every element of a `(B, N)` tensor.
pub fn bernoulli<T: Real>(p: &BatchedTensor<T>, rng: &Rng) -> Result<BatchedTensor<T>> {
    bernoulli_step(p, rng, 0)
}

/// Bernoulli draws at a given time step, so repeated calls are independent.
pub fn bernoulli_step<T: Real>(
    p: &BatchedTensor<T>,
    rng: &Rng,
    step: u64,
) -> Result<BatchedTensor<T>> {
    check_probabilities(p.data())?;
    let mut out = BatchedTensor::zeros(p.shape());
    for b in 0..p.batch() {
        let probs = p.sample(b);
        bernoulli_row(rng, b as u64, step, |i| probs[i].as_f64(), out.sample_mut(b));
    }
    Ok(out)
}
