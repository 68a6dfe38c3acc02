//! Network container and the clock-driven run loop.
//!
//! Each time step has four phases:
//!
//! 1. gather: every group's input current is the external injection plus
//!    `spikes · W` over its incoming connections;
//! 2. step: every group advances;
//! 3. learn: plastic connections update traces and apply their
//!    batch-reduced STDP update (only when learning is enabled);
//! 4. record: monitors append the current values.
//!
//! With [`Propagation::Delayed`] all currents are gathered before any group
//! steps, so a spike reaches the next group one step later and the order in
//! which groups were added is irrelevant. [`Propagation::Immediate`] steps
//! groups in insertion order and lets a spike cross every feed-forward
//! connection within the same step, which is what a rate-coded converted
//! network needs; connections pointing backwards (or to themselves) still
//! see the previous step's spikes.
//!
//! Memory: every group and every plastic connection holds `O(B·N)` batched
//! state, weights are stored once, and the STDP update is reduced into a
//! single `N_pre × N_post` buffer per step, so no `O(B·N_pre·N_post)` state
//! persists between steps.

use std::any::Any;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::neurons::{NeuronGroup, Variable};
use crate::scalar::Real;
use crate::tensor::{matmul_batch_acc, BatchedTensor, TimeSeries};
use crate::topology::Connection;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulationMode {
    /// Transient state is reset at the start of every `run`.
    #[default]
    Episodic,
    /// State carries over between `run` calls.
    Continuing,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    #[default]
    Delayed,
    Immediate,
}

/// Something that supplies a `(B, n)` input frame per time step.
pub trait InputSource<T: Real>: Sync {
    fn batch(&self) -> usize;

    fn size(&self) -> usize;

    /// Number of steps available, or `None` for an unbounded source.
    fn steps(&self) -> Option<usize>;

    /// Adds the frame for step `t` into `out`.
    fn add_step(&self, t: usize, out: &mut [T]) -> Result<()>;
}

impl<T: Real> InputSource<T> for TimeSeries<T> {
    fn batch(&self) -> usize {
        TimeSeries::batch(self)
    }
    fn size(&self) -> usize {
        TimeSeries::size(self)
    }
    fn steps(&self) -> Option<usize> {
        Some(TimeSeries::steps(self))
    }
    fn add_step(&self, t: usize, out: &mut [T]) -> Result<()> {
        for (o, &x) in out.iter_mut().zip(self.step(t)) {
            *o += x;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MonitorTarget {
    Group { group: String, variable: Variable },
    Weights { connection: String },
}

#[derive(Clone, Debug)]
pub struct Monitor<T> {
    pub name: String,
    pub target: MonitorTarget,
    recording: TimeSeries<T>,
}

impl<T: Real> Monitor<T> {
    pub fn recording(&self) -> &TimeSeries<T> {
        &self.recording
    }
}

/// Recordings produced by one `run` call, keyed by monitor name.
#[derive(Clone, Debug, Default)]
pub struct Recordings<T> {
    pub series: BTreeMap<String, TimeSeries<T>>,
}

impl<T: Real> Recordings<T> {
    pub fn get(&self, monitor: &str) -> Result<&TimeSeries<T>> {
        self.series.get(monitor).ok_or_else(|| SnnError::NotFound {
            kind: "monitor",
            name: monitor.to_string(),
        })
    }
}

/// Bytes held by a network, by category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoryReport {
    /// Weights and other single-copy parameters (theta, biases).
    pub shared_parameters: usize,
    /// Per-neuron state replicated across the batch, including input buffers.
    pub neuron_state: usize,
    /// Batched pre/post spike traces of plastic connections.
    pub trace_state: usize,
    /// Persistent per-synapse state replicated across the batch.
    pub synapse_state: usize,
    /// Per-step reduced-update buffers (one `N_pre × N_post` matrix per
    /// plastic connection, released after each step).
    pub update_buffers: usize,
    pub monitors: usize,
}

impl MemoryReport {
    pub fn batched_state(&self) -> usize {
        self.neuron_state + self.trace_state + self.synapse_state
    }

    pub fn total(&self) -> usize {
        self.shared_parameters + self.batched_state() + self.update_buffers + self.monitors
    }

    pub fn as_map(&self) -> BTreeMap<&'static str, usize> {
        BTreeMap::from([
            ("shared_parameters", self.shared_parameters),
            ("neuron_state", self.neuron_state),
            ("trace_state", self.trace_state),
            ("synapse_state", self.synapse_state),
            ("update_buffers", self.update_buffers),
            ("monitors", self.monitors),
        ])
    }
}

#[derive(Debug)]
struct GroupSlot<T> {
    name: String,
    group: Box<dyn NeuronGroup<T>>,
}

#[derive(Debug)]
struct ConnSlot<T> {
    name: String,
    pre: usize,
    post: usize,
    conn: Connection<T>,
}

#[derive(Debug)]
pub struct Network<T: Real> {
    dt: T,
    batch: usize,
    mode: SimulationMode,
    propagation: Propagation,
    learning: bool,
    groups: Vec<GroupSlot<T>>,
    inputs: Vec<BatchedTensor<T>>,
    connections: Vec<ConnSlot<T>>,
    monitors: Vec<Monitor<T>>,
    steps_elapsed: usize,
}

impl<T: Real> Network<T> {
    pub fn new(dt: T) -> Self {
        Network {
            dt,
            batch: 1,
            mode: SimulationMode::Episodic,
            propagation: Propagation::Delayed,
            learning: true,
            groups: Vec::new(),
            inputs: Vec::new(),
            connections: Vec::new(),
            monitors: Vec::new(),
            steps_elapsed: 0,
        }
    }

    pub fn with_mode(mut self, mode: SimulationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_propagation(mut self, propagation: Propagation) -> Self {
        self.propagation = propagation;
        self
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn set_dt(&mut self, dt: T) -> Result<()> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(SnnError::Domain(format!("dt must be positive, got {dt}")));
        }
        self.dt = dt;
        Ok(())
    }

    pub fn mode(&self) -> SimulationMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: SimulationMode) {
        self.mode = mode;
    }

    pub fn propagation(&self) -> Propagation {
        self.propagation
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn learning(&self) -> bool {
        self.learning
    }

    pub fn steps_elapsed(&self) -> usize {
        self.steps_elapsed
    }

    pub fn set_learning(&mut self, enabled: bool) {
        self.learning = enabled;
        for g in &mut self.groups {
            g.group.set_learning(enabled);
        }
    }

    fn group_index(&self, name: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g.name == name)
            .ok_or_else(|| SnnError::NotFound {
                kind: "group",
                name: name.to_string(),
            })
    }

    fn connection_index(&self, name: &str) -> Result<usize> {
        self.connections
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| SnnError::NotFound {
                kind: "connection",
                name: name.to_string(),
            })
    }

    pub fn add_group<G: NeuronGroup<T> + 'static>(&mut self, name: &str, group: G) -> Result<()> {
        self.add_boxed_group(name, Box::new(group))
    }

    pub fn add_boxed_group(&mut self, name: &str, mut group: Box<dyn NeuronGroup<T>>) -> Result<()> {
        if self.group_index(name).is_ok() {
            return Err(SnnError::Config(format!("duplicate group `{name}`")));
        }
        group.set_batch_size(self.batch);
        group.set_learning(self.learning);
        self.inputs.push(BatchedTensor::zeros(&[self.batch, group.size()]));
        self.groups.push(GroupSlot {
            name: name.to_string(),
            group,
        });
        Ok(())
    }

    pub fn connect(&mut self, name: &str, pre: &str, post: &str, mut conn: Connection<T>) -> Result<()> {
        if self.connection_index(name).is_ok() {
            return Err(SnnError::Config(format!("duplicate connection `{name}`")));
        }
        let (pi, qi) = (self.group_index(pre)?, self.group_index(post)?);
        let expect = [self.groups[pi].group.size(), self.groups[qi].group.size()];
        if [conn.n_pre(), conn.n_post()] != expect {
            return Err(SnnError::dims(
                "connection weights",
                &[conn.n_pre(), conn.n_post()],
                &expect,
            ));
        }
        conn.set_batch_size(self.batch);
        self.connections.push(ConnSlot {
            name: name.to_string(),
            pre: pi,
            post: qi,
            conn,
        });
        Ok(())
    }

    pub fn add_monitor(&mut self, name: &str, target: MonitorTarget) -> Result<()> {
        if self.monitors.iter().any(|m| m.name == name) {
            return Err(SnnError::Config(format!("duplicate monitor `{name}`")));
        }
        let (batch, size) = match &target {
            MonitorTarget::Group { group, variable } => {
                let g = &self.groups[self.group_index(group)?].group;
                let (lead, values) = g.variable(*variable).ok_or_else(|| {
                    SnnError::Config(format!("group `{group}` has no variable {variable:?}"))
                })?;
                (lead, values.len() / lead.max(1))
            }
            MonitorTarget::Weights { connection } => {
                let c = &self.connections[self.connection_index(connection)?].conn;
                (1, c.n_pre() * c.n_post())
            }
        };
        self.monitors.push(Monitor {
            name: name.to_string(),
            target,
            recording: TimeSeries::recorder(batch, size),
        });
        Ok(())
    }

    pub fn group(&self, name: &str) -> Result<&dyn NeuronGroup<T>> {
        Ok(self.groups[self.group_index(name)?].group.as_ref())
    }

    pub fn group_as<G: 'static>(&self, name: &str) -> Result<&G> {
        let any: &dyn Any = self.groups[self.group_index(name)?].group.as_any();
        any.downcast_ref::<G>()
            .ok_or_else(|| SnnError::Config(format!("group `{name}` has a different type")))
    }

    pub fn group_as_mut<G: 'static>(&mut self, name: &str) -> Result<&mut G> {
        let i = self.group_index(name)?;
        self.groups[i]
            .group
            .as_any_mut()
            .downcast_mut::<G>()
            .ok_or_else(|| SnnError::Config(format!("group `{name}` has a different type")))
    }

    pub fn group_names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn connection(&self, name: &str) -> Result<&Connection<T>> {
        Ok(&self.connections[self.connection_index(name)?].conn)
    }

    pub fn connection_mut(&mut self, name: &str) -> Result<&mut Connection<T>> {
        let i = self.connection_index(name)?;
        Ok(&mut self.connections[i].conn)
    }

    pub fn connection_names(&self) -> Vec<&str> {
        self.connections.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn monitor(&self, name: &str) -> Result<&Monitor<T>> {
        self.monitors
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| SnnError::NotFound {
                kind: "monitor",
                name: name.to_string(),
            })
    }

    /// Resets transient state (voltages, refractory counters, spikes, traces)
    /// and clears monitors. Weights and adaptive thresholds are kept.
    pub fn reset_episode(&mut self) {
        for g in &mut self.groups {
            g.group.reset_state();
        }
        for x in &mut self.inputs {
            x.fill(T::zero());
        }
        for c in &mut self.connections {
            c.conn.reset_traces();
        }
        self.clear_monitors();
        self.steps_elapsed = 0;
    }

    fn clear_monitors(&mut self) {
        let leads: Vec<usize> = self
            .monitors
            .iter()
            .map(|m| self.monitor_lead(&m.target))
            .collect();
        for (m, lead) in self.monitors.iter_mut().zip(leads) {
            m.recording = TimeSeries::recorder(lead, m.recording.size());
        }
    }

    fn monitor_lead(&self, target: &MonitorTarget) -> usize {
        match target {
            MonitorTarget::Group { group, variable } => self
                .group_index(group)
                .ok()
                .and_then(|i| self.groups[i].group.variable(*variable).map(|(lead, _)| lead))
                .unwrap_or(1),
            MonitorTarget::Weights { .. } => 1,
        }
    }

    /// Reallocates all batched state for `batch` samples (reset to initial
    /// values). Shared parameters are untouched.
    pub fn set_batch_size(&mut self, batch: usize) -> Result<()> {
        if batch == 0 {
            return Err(SnnError::Domain("batch size must be at least 1".into()));
        }
        self.batch = batch;
        for (g, x) in self.groups.iter_mut().zip(&mut self.inputs) {
            g.group.set_batch_size(batch);
            *x = BatchedTensor::try_zeros(&[batch, g.group.size()])?;
        }
        for c in &mut self.connections {
            c.conn.set_batch_size(batch);
        }
        self.clear_monitors();
        self.steps_elapsed = 0;
        Ok(())
    }

    pub fn memory_report(&self) -> MemoryReport {
        let mut r = MemoryReport::default();
        for (g, x) in self.groups.iter().zip(&self.inputs) {
            let m = g.group.memory();
            r.shared_parameters += m.shared;
            r.neuron_state += m.batched + x.bytes();
        }
        for c in &self.connections {
            r.shared_parameters += c.conn.weight_bytes();
            r.trace_state += c.conn.trace_bytes();
            if c.conn.is_plastic() {
                r.update_buffers += c.conn.weights().bytes();
            }
        }
        r.monitors = self.monitors.iter().map(|m| m.recording.bytes()).sum();
        r
    }

    /// Number of steps in `time` ms; errors unless it is a whole multiple of dt.
    pub fn steps_for(&self, time: T) -> Result<usize> {
        let ratio = (time / self.dt).as_f64();
        let steps = ratio.round();
        if !(ratio >= 0.0) || (ratio - steps).abs() > 1e-6 {
            return Err(SnnError::Domain(format!(
                "simulation time {time} is not a whole number of dt = {} steps",
                self.dt
            )));
        }
        Ok(steps as usize)
    }

    /// Simulates `time` ms with the given external inputs.
    ///
    /// A source whose batch size differs from the network's triggers
    /// [`Network::set_batch_size`] first. In episodic mode transient state is
    /// reset before the first step.
    pub fn run(&mut self, inputs: &[(&str, &dyn InputSource<T>)], time: T) -> Result<Recordings<T>> {
        let steps = self.steps_for(time)?;
        let mut bound = Vec::with_capacity(inputs.len());
        let mut batch = None;
        for (name, src) in inputs {
            let gi = self.group_index(name)?;
            let size = self.groups[gi].group.size();
            if src.size() != size {
                return Err(SnnError::dims("input size", &[src.size()], &[size]));
            }
            if let Some(n) = src.steps() {
                if n != steps {
                    return Err(SnnError::dims("input steps", &[n], &[steps]));
                }
            }
            match batch {
                None => batch = Some(src.batch()),
                Some(b) if b != src.batch() => {
                    return Err(SnnError::dims("input batch sizes", &[b], &[src.batch()]))
                }
                _ => {}
            }
            bound.push((gi, *src));
        }
        if let Some(b) = batch {
            if b != self.batch {
                self.set_batch_size(b)?;
            }
        }
        if self.mode == SimulationMode::Episodic {
            self.reset_episode();
        }

        let start: Vec<usize> = self.monitors.iter().map(|m| m.recording.steps()).collect();
        for t in 0..steps {
            self.step(t, &bound)?;
        }

        let mut rec = Recordings::default();
        for (m, &s) in self.monitors.iter().zip(&start) {
            let r = &m.recording;
            let frame = r.batch() * r.size();
            let data = r.data()[s * frame..].to_vec();
            rec.series.insert(
                m.name.clone(),
                TimeSeries::from_vec(r.steps() - s, r.batch(), r.size(), data)?,
            );
        }
        Ok(rec)
    }

    fn step(&mut self, t: usize, bound: &[(usize, &dyn InputSource<T>)]) -> Result<()> {
        let dt = self.dt;
        for x in &mut self.inputs {
            x.fill(T::zero());
        }
        for &(gi, src) in bound {
            src.add_step(t, self.inputs[gi].data_mut())?;
        }

        match self.propagation {
            Propagation::Delayed => {
                for c in &self.connections {
                    let spikes = self.groups[c.pre].group.spikes();
                    matmul_batch_acc(spikes, c.conn.weights(), self.inputs[c.post].data_mut())?;
                }
                for (g, x) in self.groups.iter_mut().zip(&self.inputs) {
                    g.group.step(x, dt)?;
                }
            }
            Propagation::Immediate => {
                for gi in 0..self.groups.len() {
                    for c in self.connections.iter().filter(|c| c.post == gi) {
                        let spikes = self.groups[c.pre].group.spikes();
                        matmul_batch_acc(spikes, c.conn.weights(), self.inputs[gi].data_mut())?;
                    }
                    self.groups[gi].group.step(&self.inputs[gi], dt)?;
                }
            }
        }

        if self.learning {
            let step = self.steps_elapsed;
            for c in self.connections.iter_mut().filter(|c| c.conn.is_plastic()) {
                let s_pre = self.groups[c.pre].group.spikes();
                let s_post = self.groups[c.post].group.spikes();
                c.conn.learn(s_pre, s_post, dt).map_err(|e| match e {
                    SnnError::Numeric { what, .. } => SnnError::Numeric {
                        what: format!("{what} of connection `{}`", c.name),
                        step,
                    },
                    other => other,
                })?;
            }
        }

        for g in &self.groups {
            if !g.group.state_is_finite() {
                return Err(SnnError::Numeric {
                    what: format!("state of group `{}`", g.name),
                    step: self.steps_elapsed,
                });
            }
        }

        for m in &mut self.monitors {
            match &m.target {
                MonitorTarget::Group { group, variable } => {
                    let g = self
                        .groups
                        .iter()
                        .find(|g| &g.name == group)
                        .expect("monitor targets a registered group");
                    if let Some((_, values)) = g.group.variable(*variable) {
                        m.recording.push_step(&values);
                    }
                }
                MonitorTarget::Weights { connection } => {
                    let c = self
                        .connections
                        .iter()
                        .find(|c| &c.name == connection)
                        .expect("monitor targets a registered connection");
                    m.recording.push_step(c.conn.weights().data());
                }
            }
        }
        self.steps_elapsed += 1;
        Ok(())
    }
}
