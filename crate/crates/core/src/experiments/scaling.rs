//! Wall-clock scaling of a Poisson-driven LIF layer with batch size.

use std::time::Instant;

use serde::Serialize;

use crate::encoding::{uniform_rates, PoissonSource};
use crate::engine::Network;
use crate::error::{Result, SnnError};
use crate::neurons::{InputGroup, LifGroup, LifParams};
use crate::plasticity::StdpRule;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Reduction;
use crate::topology::{init_normal, Connection};

pub const INPUTS: usize = 100;
pub const MAX_RATE_HZ: f64 = 120.0;
pub const W_MEAN: f64 = 0.1;
pub const W_STD: f64 = 0.01;
pub const TC_TRACE: f64 = 20.0;

/// `100 Poisson inputs → n LIF neurons` with `N(0.1, 0.01)` weights; with
/// `stdp` the connection learns with the pair rule and mean reduction.
pub fn scaling_network<T: Real>(n: usize, stdp: bool, dt: T, rng: &Rng) -> Result<Network<T>> {
    let mut net = Network::new(dt);
    net.add_group("input", InputGroup::new(INPUTS))?;
    net.add_group("output", LifGroup::new(n, LifParams::default()))?;
    let w = init_normal(
        INPUTS,
        n,
        T::of(W_MEAN),
        T::of(W_STD),
        T::neg_infinity(),
        T::infinity(),
        rng,
    )?;
    let mut conn = Connection::new(w);
    if stdp {
        conn = conn.with_rule(StdpRule::default(), T::of(TC_TRACE), Reduction::Mean);
    }
    net.connect("input->output", "input", "output", conn)?;
    net.set_learning(stdp);
    Ok(net)
}

/// Poisson input with rates uniform in `[0, 120]` Hz for `batch` samples.
pub fn scaling_input<T: Real>(batch: usize, dt: T, rng: &Rng) -> Result<PoissonSource> {
    let rates = uniform_rates::<T>(batch, INPUTS, T::of(MAX_RATE_HZ), &rng.fork(1))?;
    PoissonSource::from_rates(&rates, dt, rng.fork(2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingConfig {
    pub neurons: Vec<usize>,
    pub batches: Vec<usize>,
    pub time_ms: f64,
    pub trials: usize,
    /// STDP settings to measure, e.g. `[false, true]`.
    pub stdp: Vec<bool>,
    pub seed: u64,
    pub dt: f64,
    /// Configurations whose predicted footprint exceeds this are recorded
    /// as `oom` without running.
    pub memory_budget: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            neurons: vec![100, 1000],
            batches: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
            time_ms: 1000.0,
            trials: 10,
            stdp: vec![false, true],
            seed: 0,
            dt: 1.0,
            memory_budget: 4 << 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n_neurons: usize,
    pub batch: usize,
    pub stdp: bool,
    pub trial: usize,
    pub wall_ms: Option<f64>,
    pub examples_per_sec: Option<f64>,
    pub status: &'static str,
}

pub const ROW_HEADER: [&str; 7] = [
    "n_neurons",
    "batch",
    "stdp",
    "trial",
    "wall_ms",
    "examples_per_sec",
    "status",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub n_neurons: usize,
    pub batch: usize,
    pub stdp: bool,
    pub trials: usize,
    pub wall_ms_mean: f64,
    pub wall_ms_std: f64,
    pub examples_per_sec_mean: f64,
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "n_neurons",
    "batch",
    "stdp",
    "trials",
    "wall_ms_mean",
    "wall_ms_std",
    "examples_per_sec_mean",
];

/// Bytes a network would need at `batch`, extrapolated from batch 1.
pub fn predicted_bytes<T: Real>(net: &Network<T>, batch: usize) -> usize {
    let r = net.memory_report();
    let per_sample = r.batched_state() / net.batch_size().max(1);
    r.shared_parameters + r.update_buffers + per_sample.saturating_mul(batch)
}

/// One timed run; `Ok(None)` when the configuration does not fit in memory.
pub fn time_run<T: Real>(
    n: usize,
    batch: usize,
    stdp: bool,
    cfg: &ScalingConfig,
    rng: &Rng,
) -> Result<Option<f64>> {
    let dt = T::of(cfg.dt);
    let mut net = scaling_network::<T>(n, stdp, dt, &rng.fork(10))?;
    if predicted_bytes(&net, batch) > cfg.memory_budget {
        return Ok(None);
    }
    match net.set_batch_size(batch) {
        Err(SnnError::Allocation { .. }) => return Ok(None),
        other => other?,
    }
    let input = scaling_input::<T>(batch, dt, &rng.fork(11))?;
    let start = Instant::now();
    net.run(&[("input", &input)], T::of(cfg.time_ms))?;
    Ok(Some(start.elapsed().as_secs_f64() * 1000.0))
}

/// Runs every configuration and trial; `on_row` sees each row as it is produced.
pub fn bench_scaling<T: Real>(cfg: &ScalingConfig, mut on_row: impl FnMut(&ScalingRow)) -> Result<Vec<ScalingRow>> {
    if cfg.trials == 0 {
        return Err(SnnError::Config("trials must be at least 1".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut rows = Vec::new();
    for &stdp in &cfg.stdp {
        for &n in &cfg.neurons {
            for &batch in &cfg.batches {
                for trial in 0..cfg.trials {
                    let rng = root.fork(((n as u64) << 32) ^ ((batch as u64) << 8) ^ trial as u64);
                    let wall = time_run::<T>(n, batch, stdp, cfg, &rng)?;
                    let row = ScalingRow {
                        n_neurons: n,
                        batch,
                        stdp,
                        trial,
                        wall_ms: wall,
                        examples_per_sec: wall.map(|ms| batch as f64 / (ms / 1000.0)),
                        status: if wall.is_some() { "ok" } else { "oom" },
                    };
                    on_row(&row);
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

/// Mean and sample standard deviation of wall time per configuration,
/// over completed trials.
pub fn summarize(rows: &[ScalingRow]) -> Vec<ScalingSummary> {
    let mut keys: Vec<(usize, usize, bool)> = Vec::new();
    for r in rows {
        let k = (r.n_neurons, r.batch, r.stdp);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .filter_map(|(n, b, s)| {
            let walls: Vec<f64> = rows
                .iter()
                .filter(|r| (r.n_neurons, r.batch, r.stdp) == (n, b, s))
                .filter_map(|r| r.wall_ms)
                .collect();
            if walls.is_empty() {
                return None;
            }
            let k = walls.len() as f64;
            let mean = walls.iter().sum::<f64>() / k;
            let var = if walls.len() > 1 {
                walls.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            Some(ScalingSummary {
                n_neurons: n,
                batch: b,
                stdp: s,
                trials: walls.len(),
                wall_ms_mean: mean,
                wall_ms_std: var.sqrt(),
                examples_per_sec_mean: b as f64 / (mean / 1000.0),
            })
        })
        .collect()
}
