//! Neuron populations with batched state.
//!
//! Each group keeps its fixed parameters once and its time-dependent state
//! (voltages, refractory counters, spikes) as `(B, n)` tensors. All models
//! share the [`NeuronGroup`] step interface so the engine can drive them
//! uniformly.

use std::any::Any;
use std::borrow::Cow;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::scalar::Real;
use crate::tensor::{BatchedTensor, Reduction};

/// Recordable state variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Spikes,
    Voltage,
    Theta,
}

/// Bytes held by a group, split by whether they scale with the batch size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroupMemory {
    pub shared: usize,
    pub batched: usize,
}

pub trait NeuronGroup<T: Real>: Debug + Send + Sync {
    fn kind(&self) -> &'static str;

    fn size(&self) -> usize;

    fn batch_size(&self) -> usize;

    /// Reallocates batched state for a new batch size and resets it.
    fn set_batch_size(&mut self, batch: usize);

    /// Advances one time step given this step's total input current `(B, n)`.
    fn step(&mut self, input: &BatchedTensor<T>, dt: T) -> Result<()>;

    /// Spikes emitted on the most recent step (or injected values for inputs).
    fn spikes(&self) -> &BatchedTensor<T>;

    /// Returns time-dependent state to its common initial values.
    fn reset_state(&mut self);

    /// Enables or disables adaptation of group-owned parameters.
    fn set_learning(&mut self, _enabled: bool) {}

    /// A recordable variable as `(leading dimension, values)`; shared
    /// quantities report a leading dimension of 1.
    fn variable(&self, var: Variable) -> Option<(usize, Cow<'_, [T]>)>;

    fn memory(&self) -> GroupMemory;

    fn state_is_finite(&self) -> bool;

    fn as_any(&self) -> &dyn Any;

    fn as_any_mut(&mut self) -> &mut dyn Any;
}

fn check_input<T: Real>(input: &BatchedTensor<T>, batch: usize, n: usize) -> Result<()> {
    if input.shape() != [batch, n] {
        return Err(SnnError::dims("neuron input", input.shape(), &[batch, n]));
    }
    Ok(())
}

/// Passthrough layer: emits exactly what the encoder injects.
#[derive(Clone, Debug)]
pub struct InputGroup<T> {
    n: usize,
    spikes: BatchedTensor<T>,
}

impl<T: Real> InputGroup<T> {
    pub fn new(n: usize) -> Self {
        InputGroup {
            n,
            spikes: BatchedTensor::zeros(&[1, n]),
        }
    }
}

impl<T: Real> NeuronGroup<T> for InputGroup<T> {
    fn kind(&self) -> &'static str {
        "input"
    }
    fn size(&self) -> usize {
        self.n
    }
    fn batch_size(&self) -> usize {
        self.spikes.batch()
    }
    fn set_batch_size(&mut self, batch: usize) {
        self.spikes = BatchedTensor::zeros(&[batch, self.n]);
    }
    fn step(&mut self, input: &BatchedTensor<T>, _dt: T) -> Result<()> {
        check_input(input, self.batch_size(), self.n)?;
        self.spikes.data_mut().copy_from_slice(input.data());
        Ok(())
    }
    fn spikes(&self) -> &BatchedTensor<T> {
        &self.spikes
    }
    fn reset_state(&mut self) {
        self.spikes.fill(T::zero());
    }
    fn variable(&self, var: Variable) -> Option<(usize, Cow<'_, [T]>)> {
        match var {
            Variable::Spikes => Some((self.batch_size(), Cow::Borrowed(self.spikes.data()))),
            _ => None,
        }
    }
    fn memory(&self) -> GroupMemory {
        GroupMemory {
            shared: 0,
            batched: self.spikes.bytes(),
        }
    }
    fn state_is_finite(&self) -> bool {
        self.spikes.all_finite()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// Shared LIF constants (mV, ms).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams<T> {
    pub v_rest: T,
    pub v_reset: T,
    pub v_thresh: T,
    pub tau_m: T,
    pub refrac: T,
}

impl<T: Real> Default for LifParams<T> {
    fn default() -> Self {
        LifParams {
            v_rest: T::of(-65.0),
            v_reset: T::of(-65.0),
            v_thresh: T::of(-52.0),
            tau_m: T::of(100.0),
            refrac: T::of(5.0),
        }
    }
}

#[derive(Clone, Debug)]
struct LifState<T> {
    v: BatchedTensor<T>,
    refrac_count: BatchedTensor<T>,
    spikes: BatchedTensor<T>,
}

impl<T: Real> LifState<T> {
    fn new(batch: usize, n: usize, v0: T) -> Self {
        LifState {
            v: BatchedTensor::filled(&[batch, n], v0),
            refrac_count: BatchedTensor::zeros(&[batch, n]),
            spikes: BatchedTensor::zeros(&[batch, n]),
        }
    }

    fn bytes(&self) -> usize {
        self.v.bytes() + self.refrac_count.bytes() + self.spikes.bytes()
    }

    fn is_finite(&self) -> bool {
        self.v.all_finite() && self.refrac_count.all_finite()
    }

    /// Euler-integrated leak plus instantaneous input, with refractory clamp.
    fn advance(
        &mut self,
        p: &LifParams<T>,
        input: &BatchedTensor<T>,
        dt: T,
        threshold: impl Fn(usize) -> T,
    ) {
        let n = input.sample_len();
        let leak = dt / p.tau_m;
        let v = self.v.data_mut().iter_mut();
        let r = self.refrac_count.data_mut().iter_mut();
        let s = self.spikes.data_mut().iter_mut();
        for (k, (((v, r), s), &x)) in v.zip(r).zip(s).zip(input.data()).enumerate() {
            if *r > T::zero() {
                *v = p.v_reset;
                *r = (*r - dt).max(T::zero());
                *s = T::zero();
                continue;
            }
            *v = *v + leak * (p.v_rest - *v) + x;
            if *v >= threshold(k % n) {
                *s = T::one();
                *v = p.v_reset;
                *r = p.refrac;
            } else {
                *s = T::zero();
            }
        }
    }

    fn reset(&mut self, v0: T) {
        self.v.fill(v0);
        self.refrac_count.fill(T::zero());
        self.spikes.fill(T::zero());
    }
}

/// Leaky integrate-and-fire population.
#[derive(Clone, Debug)]
pub struct LifGroup<T> {
    n: usize,
    pub params: LifParams<T>,
    state: LifState<T>,
}

impl<T: Real> LifGroup<T> {
    pub fn new(n: usize, params: LifParams<T>) -> Self {
        LifGroup {
            n,
            state: LifState::new(1, n, params.v_rest),
            params,
        }
    }

    pub fn voltage(&self) -> &BatchedTensor<T> {
        &self.state.v
    }

    pub fn voltage_mut(&mut self) -> &mut BatchedTensor<T> {
        &mut self.state.v
    }

    pub fn refractory(&self) -> &BatchedTensor<T> {
        &self.state.refrac_count
    }
}

impl<T: Real> NeuronGroup<T> for LifGroup<T> {
    fn kind(&self) -> &'static str {
        "lif"
    }
    fn size(&self) -> usize {
        self.n
    }
    fn batch_size(&self) -> usize {
        self.state.v.batch()
    }
    fn set_batch_size(&mut self, batch: usize) {
        self.state = LifState::new(batch, self.n, self.params.v_rest);
    }
    fn step(&mut self, input: &BatchedTensor<T>, dt: T) -> Result<()> {
        check_input(input, self.batch_size(), self.n)?;
        let thresh = self.params.v_thresh;
        self.state.advance(&self.params, input, dt, |_| thresh);
        Ok(())
    }
    fn spikes(&self) -> &BatchedTensor<T> {
        &self.state.spikes
    }
    fn reset_state(&mut self) {
        self.state.reset(self.params.v_rest);
    }
    fn variable(&self, var: Variable) -> Option<(usize, Cow<'_, [T]>)> {
        let b = self.batch_size();
        match var {
            Variable::Spikes => Some((b, Cow::Borrowed(self.state.spikes.data()))),
            Variable::Voltage => Some((b, Cow::Borrowed(self.state.v.data()))),
            Variable::Theta => None,
        }
    }
    fn memory(&self) -> GroupMemory {
        GroupMemory {
            shared: 0,
            batched: self.state.bytes(),
        }
    }
    fn state_is_finite(&self) -> bool {
        self.state.is_finite()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// LIF population with a homeostatic threshold offset `theta`.
///
/// `theta` is a shared parameter (one value per neuron, not per sample).
/// While learning is enabled it decays with `tc_theta` and grows by
/// `theta_plus` times the batch-reduced spike indicator of each neuron. It
/// survives episode resets.
#[derive(Clone, Debug)]
pub struct AdaptiveLifGroup<T> {
    n: usize,
    pub params: LifParams<T>,
    pub theta_plus: T,
    pub tc_theta: T,
    pub reduction: Reduction,
    learning: bool,
    // Accumulated in f64: with tc_theta = 1e6 ms the per-step decay factor
    // is closer to 1 than f32 resolves.
    theta: Vec<f64>,
    state: LifState<T>,
}

impl<T: Real> AdaptiveLifGroup<T> {
    pub fn new(n: usize, params: LifParams<T>, theta_plus: T, tc_theta: T) -> Self {
        AdaptiveLifGroup {
            n,
            state: LifState::new(1, n, params.v_rest),
            params,
            theta_plus,
            tc_theta,
            reduction: Reduction::Mean,
            learning: true,
            theta: vec![0.0; n],
        }
    }

    /// Constants for the unsupervised MNIST network: reset at -60 mV,
    /// +0.05 mV per spike, 1000 s decay.
    pub fn diehl_cook(n: usize) -> Self {
        let params = LifParams {
            v_reset: T::of(-60.0),
            ..LifParams::default()
        };
        Self::new(n, params, T::of(0.05), T::of(1.0e6))
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn theta(&self) -> Vec<T> {
        self.theta.iter().map(|&t| T::of(t)).collect()
    }

    pub fn set_theta(&mut self, theta: &[T]) -> Result<()> {
        if theta.len() != self.n {
            return Err(SnnError::dims("theta", &[theta.len()], &[self.n]));
        }
        if theta.iter().any(|t| !(*t >= T::zero())) {
            return Err(SnnError::Domain("theta must be non-negative".into()));
        }
        self.theta = theta.iter().map(|t| t.as_f64()).collect();
        Ok(())
    }

    pub fn voltage(&self) -> &BatchedTensor<T> {
        &self.state.v
    }

    pub fn voltage_mut(&mut self) -> &mut BatchedTensor<T> {
        &mut self.state.v
    }

    pub fn learning(&self) -> bool {
        self.learning
    }

    fn adapt(&mut self, dt: T) {
        let decay = (-dt.as_f64() / self.tc_theta.as_f64()).exp();
        let plus = self.theta_plus.as_f64();
        let batch = self.batch_size();
        let spikes = &self.state.spikes;
        for (j, theta) in self.theta.iter_mut().enumerate() {
            let fired = self
                .reduction
                .reduce((0..batch).map(|b| spikes.sample(b)[j].as_f64()));
            *theta = *theta * decay + plus * fired;
        }
    }
}

impl<T: Real> NeuronGroup<T> for AdaptiveLifGroup<T> {
    fn kind(&self) -> &'static str {
        "adaptive_lif"
    }
    fn size(&self) -> usize {
        self.n
    }
    fn batch_size(&self) -> usize {
        self.state.v.batch()
    }
    fn set_batch_size(&mut self, batch: usize) {
        self.state = LifState::new(batch, self.n, self.params.v_rest);
    }
    fn step(&mut self, input: &BatchedTensor<T>, dt: T) -> Result<()> {
        check_input(input, self.batch_size(), self.n)?;
        let thresh: Vec<T> = self
            .theta
            .iter()
            .map(|&t| self.params.v_thresh + T::of(t))
            .collect();
        self.state.advance(&self.params, input, dt, |j| thresh[j]);
        if self.learning {
            self.adapt(dt);
        }
        Ok(())
    }
    fn spikes(&self) -> &BatchedTensor<T> {
        &self.state.spikes
    }
    fn reset_state(&mut self) {
        self.state.reset(self.params.v_rest);
    }
    fn set_learning(&mut self, enabled: bool) {
        self.learning = enabled;
    }
    fn variable(&self, var: Variable) -> Option<(usize, Cow<'_, [T]>)> {
        let b = self.batch_size();
        match var {
            Variable::Spikes => Some((b, Cow::Borrowed(self.state.spikes.data()))),
            Variable::Voltage => Some((b, Cow::Borrowed(self.state.v.data()))),
            Variable::Theta => Some((1, Cow::Owned(self.theta()))),
        }
    }
    fn memory(&self) -> GroupMemory {
        GroupMemory {
            shared: self.theta.len() * std::mem::size_of::<f64>(),
            batched: self.state.bytes(),
        }
    }
    fn state_is_finite(&self) -> bool {
        self.state.is_finite() && self.theta.iter().all(|t| t.is_finite())
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// Non-leaky integrate-and-fire with reset by subtraction.
///
/// On a spike the voltage drops by `v_thresh - v_baseline`, so charge above
/// threshold carries into the next step. `bias` is a constant per-neuron
/// current added every step.
#[derive(Clone, Debug)]
pub struct SubtractiveIfGroup<T> {
    n: usize,
    pub v_thresh: T,
    pub v_baseline: T,
    /// Voltage at the start of every episode.
    pub v_init: T,
    bias: Vec<T>,
    v: BatchedTensor<T>,
    spikes: BatchedTensor<T>,
}

impl<T: Real> SubtractiveIfGroup<T> {
    pub fn new(n: usize) -> Self {
        SubtractiveIfGroup {
            n,
            v_thresh: T::one(),
            v_baseline: T::zero(),
            v_init: T::zero(),
            bias: vec![T::zero(); n],
            v: BatchedTensor::zeros(&[1, n]),
            spikes: BatchedTensor::zeros(&[1, n]),
        }
    }

    pub fn with_bias(mut self, bias: Vec<T>) -> Result<Self> {
        if bias.len() != self.n {
            return Err(SnnError::dims("bias", &[bias.len()], &[self.n]));
        }
        self.bias = bias;
        Ok(self)
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    /// Starts every episode at `v` instead of the baseline.
    pub fn with_initial_voltage(mut self, v: T) -> Self {
        self.v_init = v;
        self.v.fill(v);
        self
    }

    pub fn voltage(&self) -> &BatchedTensor<T> {
        &self.v
    }

    pub fn voltage_mut(&mut self) -> &mut BatchedTensor<T> {
        &mut self.v
    }
}

impl<T: Real> NeuronGroup<T> for SubtractiveIfGroup<T> {
    fn kind(&self) -> &'static str {
        "subtractive_if"
    }
    fn size(&self) -> usize {
        self.n
    }
    fn batch_size(&self) -> usize {
        self.v.batch()
    }
    fn set_batch_size(&mut self, batch: usize) {
        self.v = BatchedTensor::filled(&[batch, self.n], self.v_init);
        self.spikes = BatchedTensor::zeros(&[batch, self.n]);
    }
    fn step(&mut self, input: &BatchedTensor<T>, _dt: T) -> Result<()> {
        check_input(input, self.batch_size(), self.n)?;
        let n = self.n;
        let drop = self.v_thresh - self.v_baseline;
        let v = self.v.data_mut().iter_mut();
        let s = self.spikes.data_mut().iter_mut();
        for (k, ((v, s), &x)) in v.zip(s).zip(input.data()).enumerate() {
            *v += x + self.bias[k % n];
            if *v >= self.v_thresh {
                *s = T::one();
                *v -= drop;
            } else {
                *s = T::zero();
            }
        }
        Ok(())
    }
    fn spikes(&self) -> &BatchedTensor<T> {
        &self.spikes
    }
    fn reset_state(&mut self) {
        self.v.fill(self.v_init);
        self.spikes.fill(T::zero());
    }
    fn variable(&self, var: Variable) -> Option<(usize, Cow<'_, [T]>)> {
        let b = self.batch_size();
        match var {
            Variable::Spikes => Some((b, Cow::Borrowed(self.spikes.data()))),
            Variable::Voltage => Some((b, Cow::Borrowed(self.v.data()))),
            Variable::Theta => None,
        }
    }
    fn memory(&self) -> GroupMemory {
        GroupMemory {
            shared: self.bias.len() * T::BYTES,
            batched: self.v.bytes() + self.spikes.bytes(),
        }
    }
    fn state_is_finite(&self) -> bool {
        self.v.all_finite()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// Non-spiking readout that sums its input currents (plus bias) over a run.
#[derive(Clone, Debug)]
pub struct AccumulatorGroup<T> {
    n: usize,
    bias: Vec<T>,
    total: BatchedTensor<T>,
    spikes: BatchedTensor<T>,
}

impl<T: Real> AccumulatorGroup<T> {
    pub fn new(n: usize) -> Self {
        AccumulatorGroup {
            n,
            bias: vec![T::zero(); n],
            total: BatchedTensor::zeros(&[1, n]),
            spikes: BatchedTensor::zeros(&[1, n]),
        }
    }

    pub fn with_bias(mut self, bias: Vec<T>) -> Result<Self> {
        if bias.len() != self.n {
            return Err(SnnError::dims("bias", &[bias.len()], &[self.n]));
        }
        self.bias = bias;
        Ok(self)
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    /// Input summed since the last reset, `(B, n)`.
    pub fn total(&self) -> &BatchedTensor<T> {
        &self.total
    }
}

impl<T: Real> NeuronGroup<T> for AccumulatorGroup<T> {
    fn kind(&self) -> &'static str {
        "accumulator"
    }
    fn size(&self) -> usize {
        self.n
    }
    fn batch_size(&self) -> usize {
        self.total.batch()
    }
    fn set_batch_size(&mut self, batch: usize) {
        self.total = BatchedTensor::zeros(&[batch, self.n]);
        self.spikes = BatchedTensor::zeros(&[batch, self.n]);
    }
    fn step(&mut self, input: &BatchedTensor<T>, _dt: T) -> Result<()> {
        check_input(input, self.batch_size(), self.n)?;
        let n = self.n;
        for (k, (t, &x)) in self.total.data_mut().iter_mut().zip(input.data()).enumerate() {
            *t += x + self.bias[k % n];
        }
        Ok(())
    }
    fn spikes(&self) -> &BatchedTensor<T> {
        &self.spikes
    }
    fn reset_state(&mut self) {
        self.total.fill(T::zero());
    }
    fn variable(&self, var: Variable) -> Option<(usize, Cow<'_, [T]>)> {
        let b = self.batch_size();
        match var {
            Variable::Spikes => Some((b, Cow::Borrowed(self.spikes.data()))),
            Variable::Voltage => Some((b, Cow::Borrowed(self.total.data()))),
            Variable::Theta => None,
        }
    }
    fn memory(&self) -> GroupMemory {
        GroupMemory {
            shared: self.bias.len() * T::BYTES,
            batched: self.total.bytes() + self.spikes.bytes(),
        }
    }
    fn state_is_finite(&self) -> bool {
        self.total.all_finite()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(x: f32) -> BatchedTensor<f32> {
        BatchedTensor::from_rows(&[[x]]).unwrap()
    }

    fn lif_at(v: f32) -> LifGroup<f32> {
        let mut g = LifGroup::new(1, LifParams::default());
        g.voltage_mut().fill(v);
        g
    }

    #[test]
    fn lif_integrates_input_without_spiking() {
        let mut g = lif_at(-65.0);
        g.step(&one(10.0), 1.0).unwrap();
        assert!((g.voltage().data()[0] + 55.0).abs() < 1e-5);
        assert_eq!(g.spikes().data()[0], 0.0);
    }

    #[test]
    fn lif_rest_is_fixed_point() {
        let mut g = lif_at(-65.0);
        g.step(&one(0.0), 1.0).unwrap();
        assert_eq!(g.voltage().data()[0], -65.0);
        assert_eq!(g.spikes().data()[0], 0.0);
    }

    #[test]
    fn lif_spikes_then_stays_refractory() {
        let mut g = lif_at(-53.0);
        g.step(&one(5.0), 1.0).unwrap();
        // -53 + 0.01 * (-12) + 5 = -48.12 >= -52
        assert_eq!(g.spikes().data()[0], 1.0);
        assert_eq!(g.voltage().data()[0], -65.0);
        assert_eq!(g.refractory().data()[0], 5.0);
        for k in 0..5 {
            g.step(&one(100.0), 1.0).unwrap();
            assert_eq!(g.spikes().data()[0], 0.0, "refractory step {k}");
            assert_eq!(g.voltage().data()[0], -65.0);
        }
        g.step(&one(100.0), 1.0).unwrap();
        assert_eq!(g.spikes().data()[0], 1.0);
    }

    #[test]
    fn lif_rejects_wrong_input_shape() {
        let mut g = LifGroup::<f32>::new(3, LifParams::default());
        let bad = BatchedTensor::zeros(&[1, 2]);
        assert!(matches!(g.step(&bad, 1.0), Err(SnnError::Dimension { .. })));
    }

    #[test]
    fn adaptive_theta_grows_by_theta_plus() {
        let mut g = AdaptiveLifGroup::<f32>::diehl_cook(1);
        g.voltage_mut().fill(-53.0);
        g.step(&one(5.0), 1.0).unwrap();
        assert_eq!(g.spikes().data()[0], 1.0);
        let decay = (-1.0f64 / 1.0e6).exp();
        assert!((g.theta()[0] as f64 - 0.05).abs() < 1e-6 * decay.max(1.0));
        assert_eq!(g.voltage().data()[0], -60.0);
    }

    #[test]
    fn adaptive_theta_decays_by_e_in_one_time_constant() {
        let mut g = AdaptiveLifGroup::<f32>::diehl_cook(1);
        g.set_theta(&[1.0]).unwrap();
        let zero = one(0.0);
        for _ in 0..1_000_000 {
            g.step(&zero, 1.0).unwrap();
        }
        let expect = (-1.0f64).exp();
        let got = g.theta()[0] as f64;
        assert!(((got - expect) / expect).abs() < 1e-3, "theta {got}");
    }

    #[test]
    fn adaptive_with_zero_theta_plus_matches_lif() {
        let mut a = AdaptiveLifGroup::new(4, LifParams::default(), 0.0f32, 1e6);
        let mut l = LifGroup::new(4, LifParams::default());
        a.set_batch_size(2);
        l.set_batch_size(2);
        for t in 0..200 {
            let x: Vec<f32> = (0..8).map(|k| ((t * 7 + k * 3) % 11) as f32 * 0.9).collect();
            let x = BatchedTensor::from_vec(&[2, 4], x).unwrap();
            a.step(&x, 1.0).unwrap();
            l.step(&x, 1.0).unwrap();
            assert_eq!(a.spikes(), l.spikes());
            assert_eq!(a.voltage(), l.voltage());
        }
    }

    #[test]
    fn adaptive_theta_survives_reset_and_freezes_without_learning() {
        let mut g = AdaptiveLifGroup::<f32>::diehl_cook(2);
        let drive = BatchedTensor::from_rows(&[[20.0f32, 0.0]]).unwrap();
        for _ in 0..50 {
            g.step(&drive, 1.0).unwrap();
        }
        let theta = g.theta();
        assert!(theta[0] > 0.0 && theta[1] == 0.0);
        g.reset_state();
        assert_eq!(g.theta(), theta);
        g.set_learning(false);
        for _ in 0..50 {
            g.step(&drive, 1.0).unwrap();
        }
        assert_eq!(g.theta(), theta);
    }

    #[test]
    fn adaptive_theta_uses_batch_reduction() {
        for (red, expect) in [
            (Reduction::Sum, 0.10),
            (Reduction::Mean, 0.025),
            (Reduction::Max, 0.05),
        ] {
            let mut g = AdaptiveLifGroup::<f64>::diehl_cook(1).with_reduction(red);
            g.set_batch_size(4);
            let x = BatchedTensor::from_vec(&[4, 1], vec![20.0, 20.0, 0.0, 0.0]).unwrap();
            g.step(&x, 1.0).unwrap();
            assert!((g.theta()[0] - expect).abs() < 1e-9, "{red}");
        }
    }

    #[test]
    fn subtractive_reset_keeps_residue() {
        let mut g = SubtractiveIfGroup::<f32>::new(1);
        g.step(&one(2.5), 1.0).unwrap();
        assert_eq!(g.spikes().data()[0], 1.0);
        assert_eq!(g.voltage().data()[0], 1.5);
    }

    #[test]
    fn subtractive_below_threshold() {
        let mut g = SubtractiveIfGroup::<f32>::new(1);
        g.voltage_mut().fill(0.99);
        g.step(&one(0.0), 1.0).unwrap();
        assert_eq!(g.spikes().data()[0], 0.0);
        assert_eq!(g.voltage().data()[0], 0.99);
    }

    #[test]
    fn subtractive_rate_tracks_input() {
        let mut g = SubtractiveIfGroup::<f32>::new(1);
        let mut count = 0.0;
        for _ in 0..10 {
            g.step(&one(0.3), 1.0).unwrap();
            count += g.spikes().data()[0];
        }
        assert_eq!(count, 3.0);
    }

    #[test]
    fn reset_on_fresh_group_is_noop() {
        let mut g = LifGroup::<f32>::new(3, LifParams::default());
        let before = g.voltage().clone();
        g.reset_state();
        assert_eq!(g.voltage(), &before);
        let mut s = SubtractiveIfGroup::<f32>::new(3);
        let before = s.voltage().clone();
        s.reset_state();
        assert_eq!(s.voltage(), &before);
    }

    #[test]
    fn accumulator_sums_input_and_bias() {
        let mut g = AccumulatorGroup::<f32>::new(2).with_bias(vec![1.0, 0.0]).unwrap();
        let x = BatchedTensor::from_rows(&[[0.5f32, 2.0]]).unwrap();
        for _ in 0..4 {
            g.step(&x, 1.0).unwrap();
        }
        assert_eq!(g.total().data(), &[6.0, 8.0]);
        assert!(g.spikes().data().iter().all(|&s| s == 0.0));
    }

    proptest! {
        #[test]
        fn subtractive_charge_is_conserved(inputs in proptest::collection::vec(0.0f32..1.5, 1..300)) {
            let mut g = SubtractiveIfGroup::<f32>::new(1);
            let mut injected = 0.0f64;
            let mut spikes = 0.0f64;
            for &x in &inputs {
                g.step(&one(x), 1.0).unwrap();
                injected += x as f64;
                spikes += g.spikes().data()[0] as f64;
            }
            let v = g.voltage().data()[0] as f64;
            prop_assert!((injected - spikes - v).abs() < 1e-4);
        }

        #[test]
        fn lif_batch_rows_match_single_runs(seed in 0u64..1000) {
            let mut batched = LifGroup::<f32>::new(5, LifParams::default());
            batched.set_batch_size(3);
            let mut singles: Vec<_> = (0..3).map(|_| LifGroup::<f32>::new(5, LifParams::default())).collect();
            for t in 0..100u64 {
                let x: Vec<f32> = (0..15u64)
                    .map(|k| ((seed.wrapping_mul(31) + t * 17 + k * 13) % 23) as f32 * 0.4)
                    .collect();
                let xb = BatchedTensor::from_vec(&[3, 5], x).unwrap();
                batched.step(&xb, 1.0).unwrap();
                for (b, g) in singles.iter_mut().enumerate() {
                    g.step(&xb.select(b), 1.0).unwrap();
                    prop_assert_eq!(g.spikes().data(), batched.spikes().sample(b));
                    prop_assert_eq!(g.voltage().data(), batched.voltage().sample(b));
                    prop_assert!(batched.refractory().sample(b).iter().zip(batched.spikes().sample(b)).all(|(&r, &s)| s == 0.0 || r == 5.0));
                }
            }
        }
    }
}
