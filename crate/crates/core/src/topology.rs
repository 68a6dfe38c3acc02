//! Connections between neuron groups.
//!
//! A connection owns one shared `N_pre × N_post` weight matrix. Only the
//! spike traces used by its plasticity rule carry a batch dimension.

use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Result, SnnError};
use crate::plasticity::{reduced_stdp_update, reduce_checked, update_traces, SpikeTraces, StdpRule};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::{BatchedTensor, Matrix, Reduction};

/// Gaussian weights, clamped to `[w_min, w_max]`.
pub fn init_normal<T: Real>(
    rows: usize,
    cols: usize,
    mu: T,
    sigma: T,
    w_min: T,
    w_max: T,
    rng: &Rng,
) -> Result<Matrix<T>> {
    if !(sigma >= T::zero()) {
        return Err(SnnError::Domain(format!(
            "standard deviation must be non-negative, got {sigma}"
        )));
    }
    let dist = Normal::new(mu.as_f64(), sigma.as_f64())
        .map_err(|e| SnnError::Domain(e.to_string()))?;
    let mut g = rng.generator(0);
    let data = (0..rows * cols)
        .map(|_| T::of(dist.sample(&mut g)).max(w_min).min(w_max))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Uniform weights in `[lo, hi)`.
pub fn init_uniform<T: Real>(rows: usize, cols: usize, lo: T, hi: T, rng: &Rng) -> Result<Matrix<T>> {
    if !(lo <= hi) {
        return Err(SnnError::Domain(format!("empty range [{lo}, {hi})")));
    }
    if lo == hi {
        return Ok(Matrix::filled(rows, cols, lo));
    }
    let dist = Uniform::new(lo.as_f64(), hi.as_f64()).map_err(|e| SnnError::Domain(e.to_string()))?;
    let mut g = rng.generator(0);
    let data = (0..rows * cols).map(|_| T::of(dist.sample(&mut g))).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Lateral inhibition: `-w_inh` everywhere except a zero diagonal.
pub fn wta_inhibition<T: Real>(n: usize, w_inh: T) -> Matrix<T> {
    let mut m = Matrix::filled(n, n, -w_inh);
    for i in 0..n {
        m.set(i, i, T::zero());
    }
    m
}

/// Scales each column to sum to `norm_sum`. All-zero columns are left alone.
pub fn normalize_columns<T: Real>(w: &mut Matrix<T>, norm_sum: T) -> Result<()> {
    if let Some(bad) = w.data().iter().find(|&&x| x < T::zero()) {
        return Err(SnnError::Contract(format!(
            "column normalization needs non-negative weights, found {bad}"
        )));
    }
    let scale: Vec<T> = w
        .column_sums()
        .into_iter()
        .map(|s| if s > T::zero() { norm_sum / s } else { T::one() })
        .collect();
    for r in 0..w.rows() {
        for (x, &k) in w.row_mut(r).iter_mut().zip(&scale) {
            *x *= k;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Plasticity<T> {
    rule: StdpRule<T>,
    tc_trace: T,
    traces: SpikeTraces<T>,
}

/// Weighted all-to-all projection with optional online plasticity.
#[derive(Clone, Debug)]
pub struct Connection<T> {
    w: Matrix<T>,
    w_min: T,
    w_max: T,
    reduction: Reduction,
    norm_sum: Option<T>,
    plasticity: Option<Plasticity<T>>,
}

impl<T: Real> Connection<T> {
    /// Fixed connection with unbounded weights.
    pub fn new(w: Matrix<T>) -> Self {
        Connection {
            w,
            w_min: T::neg_infinity(),
            w_max: T::infinity(),
            reduction: Reduction::Mean,
            norm_sum: None,
            plasticity: None,
        }
    }

    /// Sets clamp bounds and clamps the current weights into them.
    pub fn with_bounds(mut self, w_min: T, w_max: T) -> Result<Self> {
        if !(w_min <= w_max) {
            return Err(SnnError::Domain(format!("bounds [{w_min}, {w_max}] are empty")));
        }
        self.w_min = w_min;
        self.w_max = w_max;
        self.clamp();
        Ok(self)
    }

    /// Attaches an STDP rule whose traces decay with `tc_trace` (ms).
    pub fn with_rule(mut self, rule: StdpRule<T>, tc_trace: T, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self.plasticity = Some(Plasticity {
            rule,
            tc_trace,
            traces: SpikeTraces::new(1, self.w.rows(), self.w.cols(), tc_trace),
        });
        self
    }

    /// Keeps every column summing to `norm_sum`; normalizes immediately.
    pub fn with_normalization(mut self, norm_sum: T) -> Result<Self> {
        if !(norm_sum > T::zero()) {
            return Err(SnnError::Domain(format!("norm_sum must be positive, got {norm_sum}")));
        }
        self.norm_sum = Some(norm_sum);
        normalize_columns(&mut self.w, norm_sum)?;
        Ok(self)
    }

    pub fn n_pre(&self) -> usize {
        self.w.rows()
    }

    pub fn n_post(&self) -> usize {
        self.w.cols()
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.w
    }

    /// Replaces the weights, re-applying bounds and normalization.
    pub fn set_weights(&mut self, w: Matrix<T>) -> Result<()> {
        if w.shape() != self.w.shape() {
            return Err(SnnError::dims("weights", &w.shape(), &self.w.shape()));
        }
        self.w = w;
        self.clamp();
        self.normalize()
    }

    pub fn bounds(&self) -> (T, T) {
        (self.w_min, self.w_max)
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn set_reduction(&mut self, reduction: Reduction) {
        self.reduction = reduction;
    }

    pub fn norm_sum(&self) -> Option<T> {
        self.norm_sum
    }

    pub fn rule(&self) -> Option<&StdpRule<T>> {
        self.plasticity.as_ref().map(|p| &p.rule)
    }

    pub fn traces(&self) -> Option<&SpikeTraces<T>> {
        self.plasticity.as_ref().map(|p| &p.traces)
    }

    pub fn is_plastic(&self) -> bool {
        self.plasticity.is_some()
    }

    /// Rescales columns to `norm_sum` if normalization is configured.
    pub fn normalize(&mut self) -> Result<()> {
        match self.norm_sum {
            Some(s) => normalize_columns(&mut self.w, s),
            None => Ok(()),
        }
    }

    fn clamp(&mut self) {
        let (lo, hi) = (self.w_min, self.w_max);
        self.w.data_mut().iter_mut().for_each(|x| *x = x.max(lo).min(hi));
    }

    pub(crate) fn set_batch_size(&mut self, batch: usize) {
        if let Some(p) = &mut self.plasticity {
            p.traces = SpikeTraces::new(batch, self.w.rows(), self.w.cols(), p.tc_trace);
        }
    }

    pub(crate) fn reset_traces(&mut self) {
        if let Some(p) = &mut self.plasticity {
            p.traces.reset();
        }
    }

    /// Adds an already reduced update, clamps, then renormalizes.
    pub fn apply_reduced(&mut self, update: &Matrix<T>) -> Result<()> {
        if update.shape() != self.w.shape() {
            return Err(SnnError::dims("weight update", &update.shape(), &self.w.shape()));
        }
        if !update.data().iter().all(|x| x.is_finite()) {
            return Err(SnnError::Numeric {
                what: "reduced weight update".into(),
                step: 0,
            });
        }
        let (lo, hi) = (self.w_min, self.w_max);
        for (w, &d) in self.w.data_mut().iter_mut().zip(update.data()) {
            *w = (*w + d).max(lo).min(hi);
        }
        self.normalize()
    }

    /// Reduces per-sample deltas `(B, N_pre, N_post)` with this connection's
    /// policy and applies the result.
    pub fn apply_update(&mut self, deltas: &BatchedTensor<T>) -> Result<()> {
        if self.plasticity.is_none() {
            return Err(SnnError::Contract("connection has no plasticity rule".into()));
        }
        let reduced = reduce_checked(deltas, self.reduction, &self.w.shape())?;
        self.apply_reduced(&reduced)
    }

    /// One online learning step given this step's pre and post spikes.
    pub(crate) fn learn(
        &mut self,
        s_pre: &BatchedTensor<T>,
        s_post: &BatchedTensor<T>,
        dt: T,
    ) -> Result<()> {
        let Some(p) = &mut self.plasticity else {
            return Ok(());
        };
        update_traces(&mut p.traces, s_pre, s_post, dt)?;
        // Without the spikes that gate the rule every delta is zero.
        let fired = |s: &BatchedTensor<T>| s.data().iter().any(|&x| x != T::zero());
        if !fired(s_post) && !(p.rule.uses_pre_spikes() && fired(s_pre)) {
            return Ok(());
        }
        let update = reduced_stdp_update(&p.rule, &p.traces, s_pre, s_post, self.reduction)?;
        self.apply_reduced(&update)
    }

    pub fn weight_bytes(&self) -> usize {
        self.w.bytes()
    }

    pub fn trace_bytes(&self) -> usize {
        self.plasticity.as_ref().map_or(0, |p| p.traces.bytes())
    }
}
