#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use batchsnn::conversion::{convert_with, normalize_activations, INITIAL_VOLTAGE};
use batchsnn::experiments::output::emit_csv;
use batchsnn::experiments::scaling::{bench_scaling, summarize, ScalingConfig, ROW_HEADER, SUMMARY_HEADER};
use batchsnn::experiments::unsupervised::{unsupervised_train, write_filters, UnsupervisedConfig, CURVE_HEADER, FEEDFORWARD};
use batchsnn::mlp::{train_mlp, unit_inputs, TrainConfig, MNIST_ARCH};
use batchsnn::mnist::{load_mnist, resolve_data_dir, MnistDataset, Split};
use batchsnn::{Mlp, Reduction, Rng};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "batchsnn", version, about = "Minibatched spiking neural network experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory holding the MNIST IDX files.
    #[arg(long, global = true, env = "SNN_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Simulation time step in ms.
    #[arg(long, global = true, default_value_t = 1.0)]
    dt: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Train the 784-256-128-10 ReLU perceptron and save it as SNNW.
    TrainMlp(TrainMlpArgs),
    /// Convert a trained perceptron to an IF network and measure accuracy per simulation time.
    Convert(ConvertArgs),
    /// Time a Poisson-driven LIF layer across batch sizes.
    BenchScaling(ScalingArgs),
    /// Unsupervised STDP learning of MNIST digits.
    Unsupervised(UnsupervisedArgs),
}

#[derive(Args)]
struct TrainMlpArgs {
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Learning-rate multiplier applied after each epoch.
    #[arg(long, default_value_t = 0.85)]
    lr_decay: f64,
    /// Output path (default: <out-dir>/mlp.snnw).
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Trained model (default: <out-dir>/mlp.snnw).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Simulation times in ms.
    #[arg(long, value_delimiter = ',', default_value = "1,3,10,20")]
    time: Vec<f64>,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 99.9)]
    norm_percentile: f64,
    /// Training images used to calibrate the activation scales.
    #[arg(long, default_value_t = 10_000)]
    calibration: usize,
    /// Hidden-neuron membrane potential at the start of each run, as a fraction of threshold.
    #[arg(long, default_value_t = INITIAL_VOLTAGE)]
    initial_voltage: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StdpChoice {
    Off,
    On,
    Both,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,1000")]
    neurons: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256")]
    batches: Vec<usize>,
    #[arg(long, default_value_t = 1000.0)]
    time_ms: f64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = StdpChoice::Both)]
    stdp: StdpChoice,
    /// Configurations predicted to exceed this are recorded as `oom`.
    #[arg(long, default_value_t = 4096)]
    memory_budget_mb: usize,
}

#[derive(Args)]
struct UnsupervisedArgs {
    #[arg(long, default_value_t = 100)]
    neurons: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Batch reduction for feed-forward weight updates.
    #[arg(long, default_value = "max")]
    reduction: Reduction,
    /// Batch reduction for adaptive threshold increments.
    #[arg(long, default_value = "sum")]
    theta_reduction: Reduction,
    #[arg(long, default_value_t = 10_000)]
    train_examples: usize,
    #[arg(long, default_value_t = 250)]
    eval_every: usize,
    #[arg(long, default_value_t = 250.0)]
    exposure_ms: f64,
    #[arg(long, default_value_t = 1000)]
    label_examples: usize,
    #[arg(long, default_value_t = 1000)]
    test_examples: usize,
    #[arg(long, default_value_t = 250)]
    eval_batch: usize,
    #[arg(long, default_value_t = 0.01)]
    eta_post: f64,
    #[arg(long, default_value_t = 78.4)]
    norm_sum: f64,
    #[arg(long, default_value_t = 120.0)]
    w_inh: f64,
}

fn load(common: &Common, split: Split) -> Result<MnistDataset> {
    let dir = resolve_data_dir(common.data_dir.as_deref());
    load_mnist(&dir, split).with_context(|| format!("loading MNIST {split} split from {}", dir.display()))
}

fn out_path(common: &Common, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("creating {}", common.out_dir.display()))?;
    Ok(common.out_dir.join(name))
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    lr: f64,
    mean_loss: f64,
    test_accuracy: f64,
}

fn train_mlp_cmd(common: &Common, args: &TrainMlpArgs) -> Result<()> {
    let train = load(common, Split::Train)?;
    let test = load(common, Split::Test)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        momentum: args.momentum,
        batch: args.batch,
        lr_decay: args.lr_decay,
    };
    let mut rows = Vec::new();
    let model = train_mlp::<f32>(&train, &MNIST_ARCH, &cfg, &Rng::new(common.seed), |m, s| {
        let acc = m.accuracy(&test).unwrap_or(f64::NAN);
        println!("epoch {:>2}  loss {:.4}  test {:.2}%", s.epoch, s.mean_loss, acc);
        rows.push(EpochRow {
            epoch: s.epoch,
            lr: s.lr,
            mean_loss: s.mean_loss,
            test_accuracy: acc,
        });
    })?;
    let path = match &args.weights {
        Some(p) => p.clone(),
        None => out_path(common, "mlp.snnw")?,
    };
    model.save(&path)?;
    emit_csv(&out_path(common, "mlp_training.csv")?, &["epoch", "lr", "mean_loss", "test_accuracy"], &rows)?;
    println!("test accuracy {:.2}%, weights written to {}", model.accuracy(&test)?, path.display());
    Ok(())
}

#[derive(Serialize)]
struct ConversionRow {
    time_ms: f64,
    dt: f64,
    batch: usize,
    norm_percentile: f64,
    ann_accuracy: f64,
    snn_accuracy: f64,
    wall_ms: f64,
}

fn convert_cmd(common: &Common, args: &ConvertArgs) -> Result<()> {
    let path = match &args.weights {
        Some(p) => p.clone(),
        None => common.out_dir.join("mlp.snnw"),
    };
    let model = Mlp::load(&path).with_context(|| format!("reading {}", path.display()))?;
    let train = load(common, Split::Train)?;
    let test = load(common, Split::Test)?;
    let ann = model.accuracy(&test)?;
    let calib: Vec<usize> = (0..args.calibration.min(train.len())).collect();
    let x = unit_inputs::<f32>(&train, &calib);
    let scales = normalize_activations(&model, x.view(), args.norm_percentile)?;
    println!("ANN accuracy {ann:.2}%, layer scales {scales:?}");
    let mut snn = convert_with(&model, &scales, args.initial_voltage as f32)?;
    let mut rows = Vec::new();
    for &t in &args.time {
        let start = Instant::now();
        let acc = snn.evaluate(&test, t as f32, common.dt as f32, args.batch)?;
        let wall = start.elapsed().as_secs_f64() * 1000.0;
        println!("T = {t:>5} ms  SNN accuracy {acc:.2}%  ({wall:.0} ms)");
        rows.push(ConversionRow {
            time_ms: t,
            dt: common.dt,
            batch: args.batch,
            norm_percentile: args.norm_percentile,
            ann_accuracy: ann,
            snn_accuracy: acc,
            wall_ms: wall,
        });
    }
    emit_csv(
        &out_path(common, "conversion.csv")?,
        &["time_ms", "dt", "batch", "norm_percentile", "ann_accuracy", "snn_accuracy", "wall_ms"],
        &rows,
    )?;
    Ok(())
}

fn scaling_cmd(common: &Common, args: &ScalingArgs) -> Result<()> {
    let cfg = ScalingConfig {
        neurons: args.neurons.clone(),
        batches: args.batches.clone(),
        time_ms: args.time_ms,
        trials: args.trials,
        stdp: match args.stdp {
            StdpChoice::Off => vec![false],
            StdpChoice::On => vec![true],
            StdpChoice::Both => vec![false, true],
        },
        seed: common.seed,
        dt: common.dt,
        memory_budget: args.memory_budget_mb << 20,
    };
    let rows = bench_scaling::<f32>(&cfg, |r| {
        if r.trial + 1 == cfg.trials || r.status != "ok" {
            println!(
                "n={:<5} B={:<4} stdp={:<5} {}",
                r.n_neurons,
                r.batch,
                r.stdp,
                r.wall_ms.map_or("oom".to_string(), |w| format!("{w:.1} ms")),
            );
        }
    })?;
    emit_csv(&out_path(common, "scaling.csv")?, &ROW_HEADER, &rows)?;
    emit_csv(&out_path(common, "scaling_summary.csv")?, &SUMMARY_HEADER, &summarize(&rows))?;
    Ok(())
}

fn unsupervised_cmd(common: &Common, args: &UnsupervisedArgs) -> Result<()> {
    if args.train_examples > 60_000 {
        bail!("at most 60000 training examples are available");
    }
    let train = load(common, Split::Train)?;
    let test = load(common, Split::Test)?;
    let cfg = UnsupervisedConfig {
        n_neurons: args.neurons,
        batch: args.batch,
        reduction: args.reduction,
        theta_reduction: args.theta_reduction,
        train_examples: args.train_examples,
        eval_every: args.eval_every,
        exposure_ms: args.exposure_ms,
        dt: common.dt,
        seed: common.seed,
        label_examples: args.label_examples,
        test_examples: args.test_examples,
        eval_batch: args.eval_batch,
        eta_post: args.eta_post,
        norm_sum: args.norm_sum,
        w_inh: args.w_inh,
        ..UnsupervisedConfig::default()
    };
    let outcome = unsupervised_train::<f32>(&cfg, &train, &test, |p| {
        println!(
            "{:>6} examples  {:>9.0} ms  accuracy {:.1}%",
            p.examples_seen, p.wall_ms, p.accuracy
        );
    })?;
    let tag = format!("n{}_b{}_{}", cfg.n_neurons, cfg.batch, cfg.reduction);
    emit_csv(&out_path(common, &format!("unsupervised_{tag}.csv"))?, &CURVE_HEADER, &outcome.curve)?;
    let dir: &Path = &common.out_dir.join(format!("filters_{tag}"));
    write_filters(outcome.network.connection(FEEDFORWARD)?.weights(), dir)?;
    println!(
        "max accuracy {:.1}%, final {:.1}%, filters in {}",
        outcome.max_accuracy(),
        outcome.final_accuracy(),
        dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if !(cli.common.dt > 0.0) {
        bail!("--dt must be positive");
    }
    match &cli.command {
        Command::TrainMlp(a) => train_mlp_cmd(&cli.common, a),
        Command::Convert(a) => convert_cmd(&cli.common, a),
        Command::BenchScaling(a) => scaling_cmd(&cli.common, a),
        Command::Unsupervised(a) => unsupervised_cmd(&cli.common, a),
    }
}
