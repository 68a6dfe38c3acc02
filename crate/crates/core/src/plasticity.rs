//! Trace-based online STDP with batch-dimension reduction.
//!
//! Every time step each sample in the minibatch proposes its own weight
//! change; the connection's [`Reduction`] collapses those proposals into the
//! single update applied to the shared weights.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::scalar::Real;
use crate::tensor::{reduce_batch, BatchedTensor, Matrix, Reduction};

/// Exponentially decaying pre- and post-synaptic spike traces, `(B, N)` each.
///
/// Traces decay by `exp(-dt / tc_trace)` per step and are clamped to 1 on a
/// spike.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTraces<T> {
    pub x_pre: BatchedTensor<T>,
    pub x_post: BatchedTensor<T>,
    pub tc_trace: T,
}

impl<T: Real> SpikeTraces<T> {
    pub fn new(batch: usize, n_pre: usize, n_post: usize, tc_trace: T) -> Self {
        SpikeTraces {
            x_pre: BatchedTensor::zeros(&[batch, n_pre]),
            x_post: BatchedTensor::zeros(&[batch, n_post]),
            tc_trace,
        }
    }

    pub fn batch(&self) -> usize {
        self.x_pre.batch()
    }

    pub fn reset(&mut self) {
        self.x_pre.fill(T::zero());
        self.x_post.fill(T::zero());
    }

    pub fn bytes(&self) -> usize {
        self.x_pre.bytes() + self.x_post.bytes()
    }
}

fn decay_and_clamp<T: Real>(x: &mut BatchedTensor<T>, s: &BatchedTensor<T>, decay: T) {
    for (x, &s) in x.data_mut().iter_mut().zip(s.data()) {
        *x = if s != T::zero() { T::one() } else { *x * decay };
    }
}

/// Decays both traces by one step, then sets them to 1 where spikes occurred.
pub fn update_traces<T: Real>(
    traces: &mut SpikeTraces<T>,
    s_pre: &BatchedTensor<T>,
    s_post: &BatchedTensor<T>,
    dt: T,
) -> Result<()> {
    if s_pre.shape() != traces.x_pre.shape() {
        return Err(SnnError::dims("pre traces", s_pre.shape(), traces.x_pre.shape()));
    }
    if s_post.shape() != traces.x_post.shape() {
        return Err(SnnError::dims("post traces", s_post.shape(), traces.x_post.shape()));
    }
    let decay = (-dt / traces.tc_trace).exp();
    decay_and_clamp(&mut traces.x_pre, s_pre, decay);
    decay_and_clamp(&mut traces.x_post, s_post, decay);
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdpVariant {
    /// Potentiation on post spikes, depression on pre spikes.
    #[default]
    Pair,
    /// Potentiation on post spikes only; deltas are never negative.
    PostOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StdpRule<T> {
    pub eta_post: T,
    pub eta_pre: T,
    pub variant: StdpVariant,
}

impl<T: Real> StdpRule<T> {
    pub fn pair(eta_pre: T, eta_post: T) -> Self {
        StdpRule {
            eta_post,
            eta_pre,
            variant: StdpVariant::Pair,
        }
    }

    pub fn post_only(eta_post: T) -> Self {
        StdpRule {
            eta_post,
            eta_pre: T::zero(),
            variant: StdpVariant::PostOnly,
        }
    }

    #[inline]
    fn element(&self, x_pre: T, s_post: T, s_pre: T, x_post: T) -> T {
        match self.variant {
            StdpVariant::Pair => self.eta_post * x_pre * s_post - self.eta_pre * s_pre * x_post,
            StdpVariant::PostOnly => self.eta_post * x_pre * s_post,
        }
    }

    pub(crate) fn uses_pre_spikes(&self) -> bool {
        self.variant == StdpVariant::Pair
    }
}

impl<T: Real> Default for StdpRule<T> {
    fn default() -> Self {
        StdpRule::pair(T::of(1e-4), T::of(1e-2))
    }
}

fn check_spikes<T: Real>(
    traces: &SpikeTraces<T>,
    s_pre: &BatchedTensor<T>,
    s_post: &BatchedTensor<T>,
) -> Result<()> {
    if s_pre.shape() != traces.x_pre.shape() {
        return Err(SnnError::dims("stdp pre spikes", s_pre.shape(), traces.x_pre.shape()));
    }
    if s_post.shape() != traces.x_post.shape() {
        return Err(SnnError::dims("stdp post spikes", s_post.shape(), traces.x_post.shape()));
    }
    Ok(())
}

/// Per-sample weight changes, `(B, N_pre, N_post)`.
pub fn stdp_delta<T: Real>(
    rule: &StdpRule<T>,
    traces: &SpikeTraces<T>,
    s_pre: &BatchedTensor<T>,
    s_post: &BatchedTensor<T>,
) -> Result<BatchedTensor<T>> {
    check_spikes(traces, s_pre, s_post)?;
    let batch = traces.batch();
    let n_pre = traces.x_pre.sample_len();
    let n_post = traces.x_post.sample_len();
    let mut out = BatchedTensor::zeros(&[batch, n_pre, n_post]);
    for b in 0..batch {
        let (xp, sp) = (traces.x_pre.sample(b), s_pre.sample(b));
        let (xq, sq) = (traces.x_post.sample(b), s_post.sample(b));
        let slice = out.sample_mut(b);
        for i in 0..n_pre {
            let row = &mut slice[i * n_post..(i + 1) * n_post];
            for (j, d) in row.iter_mut().enumerate() {
                *d = rule.element(xp[i], sq[j], sp[i], xq[j]);
            }
        }
    }
    Ok(out)
}

/// Batch-reduced STDP update without materialising the `(B, N_pre, N_post)`
/// delta tensor.
///
/// A sample's delta is zero outside the rows of its firing pre neurons and
/// the columns of its firing post neurons, so only those entries are
/// visited. Each entry is combined in batch order with the same expression
/// as [`stdp_delta`], which makes the result bitwise equal to
/// `reduce_batch(stdp_delta(..), reduction)`.
pub fn reduced_stdp_update<T: Real>(
    rule: &StdpRule<T>,
    traces: &SpikeTraces<T>,
    s_pre: &BatchedTensor<T>,
    s_post: &BatchedTensor<T>,
    reduction: Reduction,
) -> Result<Matrix<T>> {
    check_spikes(traces, s_pre, s_post)?;
    let batch = traces.batch();
    let n_pre = traces.x_pre.sample_len();
    let n_post = traces.x_post.sample_len();
    let use_pre = rule.uses_pre_spikes();
    let is_max = reduction == Reduction::Max;

    let mut acc = Matrix::filled(
        n_pre,
        n_post,
        if is_max { T::neg_infinity() } else { T::zero() },
    );
    // How many samples contributed to each entry; only needed for max.
    let mut hits: Vec<u32> = if is_max { vec![0; n_pre * n_post] } else { Vec::new() };

    let fold = |acc: &mut [T], hits: &mut [u32], k: usize, d: T| {
        if is_max {
            acc[k] = acc[k].max(d);
            hits[k] += 1;
        } else {
            acc[k] += d;
        }
    };

    for b in 0..batch {
        let (xp, sp) = (traces.x_pre.sample(b), s_pre.sample(b));
        let (xq, sq) = (traces.x_post.sample(b), s_post.sample(b));
        let data = acc.data_mut();
        if use_pre {
            for i in (0..n_pre).filter(|&i| sp[i] != T::zero()) {
                for j in 0..n_post {
                    let d = rule.element(xp[i], sq[j], sp[i], xq[j]);
                    fold(data, &mut hits, i * n_post + j, d);
                }
            }
        }
        for j in (0..n_post).filter(|&j| sq[j] != T::zero()) {
            for i in 0..n_pre {
                if use_pre && sp[i] != T::zero() {
                    continue;
                }
                let d = rule.element(xp[i], sq[j], sp[i], xq[j]);
                fold(data, &mut hits, i * n_post + j, d);
            }
        }
    }

    let data = acc.data_mut();
    if is_max {
        let total = batch as u32;
        for (a, &h) in data.iter_mut().zip(&hits) {
            if h == 0 {
                *a = T::zero();
            } else if h < total {
                *a = a.max(T::zero());
            }
        }
    } else if reduction == Reduction::Mean && batch > 1 {
        let n = T::from_usize(batch).unwrap();
        data.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

pub(crate) fn reduce_checked<T: Real>(
    deltas: &BatchedTensor<T>,
    reduction: Reduction,
    weight_shape: &[usize; 2],
) -> Result<Matrix<T>> {
    if deltas.shape().len() != 3 || deltas.shape()[1..] != weight_shape[..] {
        return Err(SnnError::dims("weight deltas", deltas.shape(), weight_shape));
    }
    reduce_batch(deltas, reduction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{bernoulli_step, Rng};
    use proptest::prelude::*;

    #[test]
    fn trace_decays_exponentially() {
        let mut tr = SpikeTraces::<f32>::new(1, 1, 1, 20.0);
        tr.x_pre.fill(1.0);
        let z = BatchedTensor::zeros(&[1, 1]);
        update_traces(&mut tr, &z, &z, 1.0).unwrap();
        assert!((tr.x_pre.data()[0] - 0.951_229_4).abs() < 1e-6);
    }

    #[test]
    fn trace_clamps_to_one_on_spike() {
        let mut tr = SpikeTraces::<f32>::new(1, 1, 1, 20.0);
        tr.x_pre.fill(0.7);
        let s = BatchedTensor::filled(&[1, 1], 1.0);
        update_traces(&mut tr, &s, &s, 1.0).unwrap();
        assert_eq!(tr.x_pre.data()[0], 1.0);
        update_traces(&mut tr, &s, &s, 1.0).unwrap();
        assert_eq!(tr.x_post.data()[0], 1.0);
    }

    #[test]
    fn trace_decays_monotonically_without_spikes() {
        let mut tr = SpikeTraces::<f32>::new(1, 1, 1, 20.0);
        tr.x_post.fill(1.0);
        let z = BatchedTensor::zeros(&[1, 1]);
        let mut last = 1.0;
        for _ in 0..500 {
            update_traces(&mut tr, &z, &z, 1.0).unwrap();
            let x = tr.x_post.data()[0];
            assert!(x < last || x == 0.0);
            last = x;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn post_only_delta_is_gated_by_post_spikes() {
        let mut tr = SpikeTraces::<f32>::new(2, 3, 2, 20.0);
        tr.x_pre.fill(0.5);
        let s_pre = BatchedTensor::filled(&[2, 3], 1.0);
        let s_post = BatchedTensor::zeros(&[2, 2]);
        let d = stdp_delta(&StdpRule::post_only(0.01), &tr, &s_pre, &s_post).unwrap();
        assert!(d.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn post_only_outer_product() {
        let mut tr = SpikeTraces::<f32>::new(1, 2, 2, 20.0);
        tr.x_pre.data_mut().copy_from_slice(&[1.0, 0.5]);
        let s_pre = BatchedTensor::zeros(&[1, 2]);
        let s_post = BatchedTensor::from_rows(&[[0.0f32, 1.0]]).unwrap();
        let d = stdp_delta(&StdpRule::post_only(0.01), &tr, &s_pre, &s_post).unwrap();
        assert_eq!(d.shape(), &[1, 2, 2]);
        let expect = [0.0f32, 0.01, 0.0, 0.005];
        for (a, b) in d.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pair_without_depression_equals_post_only() {
        let rng = Rng::new(5);
        let mut tr = SpikeTraces::<f32>::new(3, 4, 5, 20.0);
        for t in 0..10 {
            let sp = bernoulli_step(&BatchedTensor::filled(&[3, 4], 0.3), &rng, t).unwrap();
            let sq = bernoulli_step(&BatchedTensor::filled(&[3, 5], 0.3), &rng.fork(1), t).unwrap();
            update_traces(&mut tr, &sp, &sq, 1.0).unwrap();
            let a = stdp_delta(&StdpRule::pair(0.0, 0.01), &tr, &sp, &sq).unwrap();
            let b = stdp_delta(&StdpRule::post_only(0.01), &tr, &sp, &sq).unwrap();
            assert_eq!(a, b);
        }
    }

    fn random_case(
        seed: u64,
        batch: usize,
        n_pre: usize,
        n_post: usize,
        p: f32,
    ) -> (SpikeTraces<f32>, BatchedTensor<f32>, BatchedTensor<f32>) {
        let rng = Rng::new(seed);
        let mut tr = SpikeTraces::new(batch, n_pre, n_post, 20.0);
        let mut sp = BatchedTensor::zeros(&[batch, n_pre]);
        let mut sq = BatchedTensor::zeros(&[batch, n_post]);
        for t in 0..6 {
            sp = bernoulli_step(&BatchedTensor::filled(&[batch, n_pre], p), &rng, t).unwrap();
            sq = bernoulli_step(&BatchedTensor::filled(&[batch, n_post], p), &rng.fork(7), t)
                .unwrap();
            update_traces(&mut tr, &sp, &sq, 1.0).unwrap();
        }
        (tr, sp, sq)
    }

    proptest! {
        #[test]
        fn sparse_update_matches_dense_reduction(
            seed in 0u64..10_000,
            batch in 1usize..6,
            n_pre in 1usize..7,
            n_post in 1usize..7,
            p in 0.0f32..0.8,
            pair in any::<bool>(),
        ) {
            let (tr, sp, sq) = random_case(seed, batch, n_pre, n_post, p);
            let rule = if pair { StdpRule::pair(0.003, 0.01) } else { StdpRule::post_only(0.01) };
            let dense = stdp_delta(&rule, &tr, &sp, &sq).unwrap();
            for red in [Reduction::Mean, Reduction::Sum, Reduction::Max] {
                let a = reduce_batch(&dense, red).unwrap();
                let b = reduced_stdp_update(&rule, &tr, &sp, &sq, red).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn post_only_deltas_never_negative(seed in 0u64..10_000, batch in 1usize..5) {
            let (tr, sp, sq) = random_case(seed, batch, 4, 4, 0.4);
            let d = stdp_delta(&StdpRule::post_only(0.01), &tr, &sp, &sq).unwrap();
            prop_assert!(d.data().iter().all(|&x| x >= 0.0));
        }
    }
}
