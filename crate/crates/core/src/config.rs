//! Declarative network description in TOML.
//!
//! ```toml
//! dt = 1.0
//! mode = "episodic"          # or "continuing"
//! propagation = "delayed"    # or "immediate"
//! learning = true
//! seed = 7
//!
//! [[group]]
//! name = "input"
//! kind = "input"             # input | lif | adaptive_lif | subtractive_if | accumulator
//! size = 100
//!
//! [[group]]
//! name = "output"
//! kind = "lif"
//! size = 1000
//! v_thresh = -52.0           # any LIF parameter may be overridden
//!
//! [[connection]]
//! pre = "input"
//! post = "output"
//! init = { kind = "normal", mean = 0.1, std = 0.01 }
//! stdp = { variant = "pair", eta_pre = 1e-4, eta_post = 1e-2, tc_trace = 20.0 }
//! reduction = "mean"
//!
//! [[monitor]]
//! name = "out_spikes"
//! group = "output"
//! variable = "spikes"
//! ```
//!
//! Connection names default to `"pre->post"`. Weight initialisers are
//! `normal {mean, std}`, `uniform {low, high}`, `constant {value}` and
//! `wta {w_inh}`; each connection draws from its own fork of the seed.

use std::path::Path;

use serde::Deserialize;

use crate::engine::{MonitorTarget, Network, Propagation, SimulationMode};
use crate::error::{Result, SnnError};
use crate::neurons::{
    AccumulatorGroup, AdaptiveLifGroup, InputGroup, LifGroup, LifParams, NeuronGroup, SubtractiveIfGroup,
    Variable,
};
use crate::plasticity::{StdpRule, StdpVariant};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::{Matrix, Reduction};
use crate::topology::{init_normal, init_uniform, wta_inhibition, Connection};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "one")]
    pub dt: f64,
    #[serde(default)]
    pub mode: SimulationMode,
    #[serde(default)]
    pub propagation: Propagation,
    #[serde(default = "yes")]
    pub learning: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(rename = "group", default)]
    pub groups: Vec<GroupConfig>,
    #[serde(rename = "connection", default)]
    pub connections: Vec<ConnectionConfig>,
    #[serde(rename = "monitor", default)]
    pub monitors: Vec<MonitorConfig>,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Input,
    Lif,
    AdaptiveLif,
    SubtractiveIf,
    Accumulator,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    pub kind: GroupKind,
    pub size: usize,
    pub v_rest: Option<f64>,
    pub v_reset: Option<f64>,
    pub v_thresh: Option<f64>,
    pub tau_m: Option<f64>,
    pub refrac: Option<f64>,
    pub theta_plus: Option<f64>,
    pub tc_theta: Option<f64>,
    /// Reduction used for the adaptive threshold update.
    pub reduction: Option<Reduction>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightInit {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
    Wta { w_inh: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StdpConfig {
    #[serde(default)]
    pub variant: StdpVariant,
    #[serde(default)]
    pub eta_pre: Option<f64>,
    #[serde(default)]
    pub eta_post: Option<f64>,
    #[serde(default = "default_tc_trace")]
    pub tc_trace: f64,
}

fn default_tc_trace() -> f64 {
    20.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionConfig {
    pub name: Option<String>,
    pub pre: String,
    pub post: String,
    pub init: WeightInit,
    pub w_min: Option<f64>,
    pub w_max: Option<f64>,
    pub norm_sum: Option<f64>,
    pub stdp: Option<StdpConfig>,
    #[serde(default)]
    pub reduction: Reduction,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub name: String,
    pub group: Option<String>,
    pub variable: Option<Variable>,
    pub connection: Option<String>,
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SnnError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SnnError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| SnnError::Config(format!("{}: {e}", path.display())))
    }

    pub fn build<T: Real>(&self) -> Result<Network<T>> {
        let mut net = Network::new(T::of(self.dt))
            .with_mode(self.mode)
            .with_propagation(self.propagation);
        net.set_dt(T::of(self.dt))?;
        for g in &self.groups {
            net.add_boxed_group(&g.name, build_group::<T>(g)?)?;
        }
        let root = Rng::new(self.seed);
        for (k, c) in self.connections.iter().enumerate() {
            let name = c.name.clone().unwrap_or_else(|| format!("{}->{}", c.pre, c.post));
            let rows = net.group(&c.pre)?.size();
            let cols = net.group(&c.post)?.size();
            net.connect(&name, &c.pre, &c.post, build_connection::<T>(c, rows, cols, &root.fork(k as u64))?)?;
        }
        for m in &self.monitors {
            let target = match (&m.group, m.variable, &m.connection) {
                (Some(g), v, None) => MonitorTarget::Group {
                    group: g.clone(),
                    variable: v.unwrap_or(Variable::Spikes),
                },
                (None, None, Some(c)) => MonitorTarget::Weights { connection: c.clone() },
                _ => {
                    return Err(SnnError::Config(format!(
                        "monitor `{}` needs either `group` (with optional `variable`) or `connection`",
                        m.name
                    )))
                }
            };
            net.add_monitor(&m.name, target)?;
        }
        net.set_learning(self.learning);
        if let Some(b) = self.batch {
            net.set_batch_size(b)?;
        }
        Ok(net)
    }
}

fn lif_params<T: Real>(g: &GroupConfig, base: LifParams<T>) -> LifParams<T> {
    let pick = |v: Option<f64>, d: T| v.map_or(d, T::of);
    LifParams {
        v_rest: pick(g.v_rest, base.v_rest),
        v_reset: pick(g.v_reset, base.v_reset),
        v_thresh: pick(g.v_thresh, base.v_thresh),
        tau_m: pick(g.tau_m, base.tau_m),
        refrac: pick(g.refrac, base.refrac),
    }
}

fn build_group<T: Real>(g: &GroupConfig) -> Result<Box<dyn NeuronGroup<T>>> {
    let bias = || -> Vec<T> {
        g.bias
            .as_ref()
            .map_or_else(|| vec![T::zero(); g.size], |b| b.iter().map(|&x| T::of(x)).collect())
    };
    Ok(match g.kind {
        GroupKind::Input => Box::new(InputGroup::new(g.size)),
        GroupKind::Lif => Box::new(LifGroup::new(g.size, lif_params(g, LifParams::default()))),
        GroupKind::AdaptiveLif => {
            let base = LifParams {
                v_reset: T::of(-60.0),
                ..LifParams::default()
            };
            Box::new(
                AdaptiveLifGroup::new(
                    g.size,
                    lif_params(g, base),
                    T::of(g.theta_plus.unwrap_or(0.05)),
                    T::of(g.tc_theta.unwrap_or(1e6)),
                )
                .with_reduction(g.reduction.unwrap_or_default()),
            )
        }
        GroupKind::SubtractiveIf => {
            let mut s = SubtractiveIfGroup::new(g.size).with_bias(bias())?;
            if let Some(t) = g.v_thresh {
                s.v_thresh = T::of(t);
            }
            if let Some(r) = g.v_reset.or(g.v_rest) {
                s.v_baseline = T::of(r);
                s.v_init = T::of(r);
            }
            Box::new(s)
        }
        GroupKind::Accumulator => Box::new(AccumulatorGroup::new(g.size).with_bias(bias())?),
    })
}

fn build_connection<T: Real>(c: &ConnectionConfig, rows: usize, cols: usize, rng: &Rng) -> Result<Connection<T>> {
    let w = match c.init {
        WeightInit::Normal { mean, std } => init_normal(
            rows,
            cols,
            T::of(mean),
            T::of(std),
            T::neg_infinity(),
            T::infinity(),
            rng,
        )?,
        WeightInit::Uniform { low, high } => init_uniform(rows, cols, T::of(low), T::of(high), rng)?,
        WeightInit::Constant { value } => Matrix::filled(rows, cols, T::of(value)),
        WeightInit::Wta { w_inh } => {
            if rows != cols {
                return Err(SnnError::Config(format!(
                    "wta weights need equal group sizes, got {rows}x{cols}"
                )));
            }
            wta_inhibition(rows, T::of(w_inh))
        }
    };
    let mut conn = Connection::new(w);
    if c.w_min.is_some() || c.w_max.is_some() {
        conn = conn.with_bounds(
            c.w_min.map_or(T::neg_infinity(), T::of),
            c.w_max.map_or(T::infinity(), T::of),
        )?;
    }
    if let Some(s) = c.stdp {
        let defaults = StdpRule::<T>::default();
        let eta_post = s.eta_post.map_or(defaults.eta_post, T::of);
        let rule = match s.variant {
            StdpVariant::Pair => StdpRule::pair(s.eta_pre.map_or(defaults.eta_pre, T::of), eta_post),
            StdpVariant::PostOnly => StdpRule::post_only(eta_post),
        };
        conn = conn.with_rule(rule, T::of(s.tc_trace), c.reduction);
    } else {
        conn.set_reduction(c.reduction);
    }
    if let Some(n) = c.norm_sum {
        conn = conn.with_normalization(T::of(n))?;
    }
    Ok(conn)
}
