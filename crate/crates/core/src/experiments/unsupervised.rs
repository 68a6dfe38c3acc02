//! Unsupervised digit learning: Poisson-coded images drive adaptive-threshold
//! LIF neurons through post-only STDP synapses, with lateral inhibition
//! between the neurons. Neurons are labelled by the class they respond to
//! most and vote on test images.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::encoding::PoissonSource;
use crate::engine::{MonitorTarget, Network};
use crate::error::{Result, SnnError};
use crate::experiments::labels::{accuracy, assign_labels, classify, NeuronAssignments};
use crate::experiments::output::emit_pgm;
use crate::mnist::{MnistDataset, PIXELS, SIDE};
use crate::neurons::{AdaptiveLifGroup, InputGroup, LifParams, Variable};
use crate::plasticity::StdpRule;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::{Matrix, Reduction};
use crate::topology::{init_uniform, wta_inhibition, Connection};

pub const INPUT: &str = "input";
pub const EXCITATORY: &str = "excitatory";
pub const FEEDFORWARD: &str = "input->excitatory";
pub const LATERAL: &str = "excitatory->excitatory";
const SPIKES: &str = "excitatory_spikes";

#[derive(Clone, Debug, PartialEq)]
pub struct UnsupervisedConfig {
    pub n_neurons: usize,
    pub batch: usize,
    pub reduction: Reduction,
    pub train_examples: usize,
    pub eval_every: usize,
    pub exposure_ms: f64,
    pub dt: f64,
    pub seed: u64,
    /// Training images (taken from the end of the training set) used to label neurons.
    pub label_examples: usize,
    /// Test images used to measure accuracy.
    pub test_examples: usize,
    /// Batch size for the frozen labelling and test passes.
    pub eval_batch: usize,
    pub eta_post: f64,
    pub tc_trace: f64,
    pub norm_sum: f64,
    pub w_inh: f64,
    /// Initial feed-forward weights are uniform in `[0, w_init_max)`.
    pub w_init_max: f64,
    pub theta_plus: f64,
    pub tc_theta: f64,
    /// How per-sample threshold increments are combined across the batch.
    pub theta_reduction: Reduction,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        UnsupervisedConfig {
            n_neurons: 100,
            batch: 16,
            reduction: Reduction::Max,
            train_examples: 10_000,
            eval_every: 250,
            exposure_ms: 250.0,
            dt: 1.0,
            seed: 0,
            label_examples: 1000,
            test_examples: 1000,
            eval_batch: 250,
            eta_post: 0.01,
            tc_trace: 20.0,
            norm_sum: 78.4,
            w_inh: 120.0,
            w_init_max: 0.3,
            theta_plus: 0.05,
            tc_theta: 1e6,
            theta_reduction: Reduction::Sum,
        }
    }
}

pub fn build_network<T: Real>(cfg: &UnsupervisedConfig, rng: &Rng) -> Result<Network<T>> {
    let n = cfg.n_neurons;
    let mut net = Network::new(T::of(cfg.dt));
    net.add_group(INPUT, InputGroup::new(PIXELS))?;
    let params = LifParams {
        v_reset: T::of(-60.0),
        ..LifParams::default()
    };
    let exc = AdaptiveLifGroup::new(n, params, T::of(cfg.theta_plus), T::of(cfg.tc_theta))
        .with_reduction(cfg.theta_reduction);
    net.add_group(EXCITATORY, exc)?;

    let w = init_uniform(PIXELS, n, T::zero(), T::of(cfg.w_init_max), &rng.fork(1))?;
    let ff = Connection::new(w)
        .with_bounds(T::zero(), T::one())?
        .with_rule(StdpRule::post_only(T::of(cfg.eta_post)), T::of(cfg.tc_trace), cfg.reduction)
        .with_normalization(T::of(cfg.norm_sum))?;
    net.connect(FEEDFORWARD, INPUT, EXCITATORY, ff)?;
    let inh = Connection::new(wta_inhibition(n, T::of(cfg.w_inh))).with_bounds(T::of(-cfg.w_inh), T::zero())?;
    net.connect(LATERAL, EXCITATORY, EXCITATORY, inh)?;
    net.add_monitor(
        SPIKES,
        MonitorTarget::Group {
            group: EXCITATORY.into(),
            variable: Variable::Spikes,
        },
    )?;
    Ok(net)
}

/// Spike counts per excitatory neuron (`indices.len() × n`), running
/// `batch` images at a time. Image `k` of `indices` draws from stream
/// `rng.stream() + k`.
pub fn spike_counts<T: Real>(
    net: &mut Network<T>,
    data: &MnistDataset,
    indices: &[usize],
    exposure_ms: f64,
    batch: usize,
    rng: &Rng,
) -> Result<Vec<f64>> {
    let mut counts = Vec::with_capacity(indices.len() * net.group(EXCITATORY)?.size());
    let dt = net.dt();
    for (c, chunk) in indices.chunks(batch.max(1)).enumerate() {
        let src = PoissonSource::from_pixels(
            &data.batch_raw::<T>(chunk),
            dt,
            rng.offset((c * batch) as u64),
        )?;
        let rec = net.run(&[(INPUT, &src)], T::of(exposure_ms))?;
        counts.extend(rec.get(SPIKES)?.sum_over_time().data().iter().map(|x| x.as_f64()));
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub examples_seen: usize,
    /// Cumulative training wall time, excluding evaluation.
    pub wall_ms: f64,
    pub accuracy: f64,
}

pub const CURVE_HEADER: [&str; 3] = ["examples_seen", "wall_ms", "accuracy"];

#[derive(Debug)]
pub struct UnsupervisedOutcome<T: Real> {
    pub curve: Vec<CurvePoint>,
    pub network: Network<T>,
    pub assignments: NeuronAssignments,
}

impl<T: Real> UnsupervisedOutcome<T> {
    pub fn max_accuracy(&self) -> f64 {
        self.curve.iter().map(|p| p.accuracy).fold(0.0, f64::max)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.curve.last().map_or(0.0, |p| p.accuracy)
    }
}

/// Frozen-weight evaluation: label neurons on `label_idx` from `train`,
/// then classify `test_idx` from `test`.
pub fn evaluate<T: Real>(
    net: &mut Network<T>,
    cfg: &UnsupervisedConfig,
    train: &MnistDataset,
    label_idx: &[usize],
    test: &MnistDataset,
    test_idx: &[usize],
    rng: &Rng,
) -> Result<(f64, NeuronAssignments)> {
    let n = cfg.n_neurons;
    let was_learning = net.learning();
    net.set_learning(false);
    let counts = spike_counts(net, train, label_idx, cfg.exposure_ms, cfg.eval_batch, &rng.fork(2))?;
    let labels: Vec<u8> = label_idx.iter().map(|&i| train.labels[i]).collect();
    let assignments = assign_labels(&counts, &labels, n)?;
    let counts = spike_counts(net, test, test_idx, cfg.exposure_ms, cfg.eval_batch, &rng.fork(3))?;
    let predicted = classify(&counts, &assignments)?;
    let truth: Vec<u8> = test_idx.iter().map(|&i| test.labels[i]).collect();
    net.set_learning(was_learning);
    Ok((accuracy(&predicted, &truth), assignments))
}

pub fn unsupervised_train<T: Real>(
    cfg: &UnsupervisedConfig,
    train: &MnistDataset,
    test: &MnistDataset,
    mut on_point: impl FnMut(&CurvePoint),
) -> Result<UnsupervisedOutcome<T>> {
    if cfg.batch == 0 || cfg.eval_every == 0 || cfg.eval_batch == 0 {
        return Err(SnnError::Config("batch sizes and eval_every must be positive".into()));
    }
    if cfg.label_examples >= train.len() {
        return Err(SnnError::Config(format!(
            "{} labelling images leave no training images out of {}",
            cfg.label_examples,
            train.len()
        )));
    }
    let rng = Rng::new(cfg.seed);
    let pool = train.len() - cfg.label_examples;
    let label_idx: Vec<usize> = (pool..train.len()).collect();
    let test_idx: Vec<usize> = (0..cfg.test_examples.min(test.len())).collect();
    let mut order: Vec<usize> = (0..pool).collect();
    order.shuffle(&mut rng.fork(4).generator(0));

    let mut net = build_network::<T>(cfg, &rng)?;
    net.set_learning(true);
    let input_rng = rng.fork(5);
    let eval_rng = rng.fork(6);
    let mut curve = Vec::new();
    let mut assignments = None;
    let mut wall = 0.0;
    let mut seen = 0usize;
    let mut next_eval = cfg.eval_every.min(cfg.train_examples);

    while seen < cfg.train_examples {
        let take = cfg.batch.min(cfg.train_examples - seen);
        let chunk: Vec<usize> = (seen..seen + take).map(|k| order[k % pool]).collect();
        let src = PoissonSource::from_pixels(
            &train.batch_raw::<T>(&chunk),
            net.dt(),
            input_rng.offset(seen as u64),
        )?;
        let start = Instant::now();
        net.run(&[(INPUT, &src)], T::of(cfg.exposure_ms))?;
        wall += start.elapsed().as_secs_f64() * 1000.0;
        seen += take;

        if seen >= next_eval || seen == cfg.train_examples {
            let (acc, a) = evaluate(&mut net, cfg, train, &label_idx, test, &test_idx, &eval_rng)?;
            let point = CurvePoint {
                examples_seen: seen,
                wall_ms: wall,
                accuracy: acc,
            };
            on_point(&point);
            curve.push(point);
            assignments = Some(a);
            while next_eval <= seen {
                next_eval += cfg.eval_every;
            }
        }
    }
    let assignments = match assignments {
        Some(a) => a,
        None => evaluate(&mut net, cfg, train, &label_idx, test, &test_idx, &eval_rng)?.1,
    };
    Ok(UnsupervisedOutcome {
        curve,
        network: net,
        assignments,
    })
}

/// Each neuron's incoming weights as a 28×28 image.
pub fn receptive_fields<T: Real>(w: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
    if w.rows() != PIXELS {
        return Err(SnnError::dims("feed-forward weights", &w.shape(), &[PIXELS]));
    }
    (0..w.cols())
        .map(|j| Matrix::from_vec(SIDE, SIDE, w.column(j)))
        .collect()
}

/// All receptive fields tiled into a near-square grid with one-pixel gaps
/// (filled with the minimum weight).
pub fn filter_grid<T: Real>(w: &Matrix<T>) -> Result<Matrix<T>> {
    let fields = receptive_fields(w)?;
    let n = fields.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let lo = w.data().iter().fold(T::infinity(), |m, &x| m.min(x));
    let cell = SIDE + 1;
    let mut grid = Matrix::filled(rows * cell - 1, cols * cell - 1, lo);
    for (k, f) in fields.iter().enumerate() {
        let (r0, c0) = ((k / cols) * cell, (k % cols) * cell);
        for r in 0..SIDE {
            grid.row_mut(r0 + r)[c0..c0 + SIDE].copy_from_slice(f.row(r));
        }
    }
    Ok(grid)
}

/// Writes `filters.pgm` (the grid) and `filters/neuron_XXX.pgm` into `dir`.
pub fn write_filters<T: Real>(w: &Matrix<T>, dir: &Path) -> Result<()> {
    emit_pgm(&filter_grid(w)?, &dir.join("filters.pgm"))?;
    for (j, f) in receptive_fields(w)?.iter().enumerate() {
        emit_pgm(f, &dir.join("filters").join(format!("neuron_{j:03}.pgm")))?;
    }
    Ok(())
}
