//! ReLU network to integrate-and-fire network conversion with data-based
//! activation normalization, and batched rate-coded inference.
//!
//! Each layer `l` is scaled by `λ_l`, a high percentile of its activations
//! over a calibration set: `W_l ← W_l · λ_{l-1} / λ_l`, `b_l ← b_l / λ_l`,
//! with `λ_0 = 1` for inputs in `[0, 1]`. Hidden layers become reset-by-
//! subtraction IF neurons with threshold 1, the output layer a non-spiking
//! accumulator whose summed input decides the label.

use ndarray::ArrayView2;

use crate::encoding::ConstantSource;
use crate::engine::{Network, Propagation, SimulationMode};
use crate::error::{Result, SnnError};
use crate::mlp::{argmax, unit_inputs, MlpModel};
use crate::mnist::MnistDataset;
use crate::neurons::{AccumulatorGroup, InputGroup, SubtractiveIfGroup};
use crate::scalar::Real;
use crate::snnw::DenseLayer;
use crate::tensor::BatchedTensor;
use crate::topology::Connection;

pub const INPUT: &str = "input";
pub const OUTPUT: &str = "output";

/// Nearest-rank percentile (`p` in `(0, 100]`) of `values`.
pub fn percentile<T: Real>(values: &[T], p: f64) -> Result<T> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(SnnError::Domain(format!("percentile must be in (0, 100], got {p}")));
    }
    if values.is_empty() {
        return Err(SnnError::Domain("percentile of an empty set".into()));
    }
    let mut v = values.to_vec();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    let (_, x, _) = v.select_nth_unstable_by(rank - 1, |a, b| a.partial_cmp(b).expect("finite activations"));
    Ok(*x)
}

/// Per-layer scales `λ_1..λ_L` from the activations of `model` on
/// `calibration` (rows in `[0, 1]`). Output-layer logits are clipped at zero
/// before taking the percentile, like the hidden ReLU layers.
pub fn normalize_activations<T: Real>(
    model: &MlpModel<T>,
    calibration: ArrayView2<T>,
    pct: f64,
) -> Result<Vec<T>> {
    let acts = model.activations(calibration)?;
    let mut scales = Vec::with_capacity(acts.len());
    for (l, a) in acts.iter().enumerate() {
        let relu: Vec<T> = a.iter().map(|&x| x.max(T::zero())).collect();
        let mut lambda = percentile(&relu, pct)?;
        if lambda <= T::zero() {
            lambda = relu.iter().fold(T::zero(), |m, &x| m.max(x));
        }
        if lambda <= T::zero() {
            return Err(SnnError::Conversion(format!(
                "layer {} is silent on every calibration input",
                l + 1
            )));
        }
        scales.push(lambda);
    }
    Ok(scales)
}

/// The model with every layer rescaled by `scales`.
pub fn scale_model<T: Real>(model: &MlpModel<T>, scales: &[T]) -> Result<MlpModel<T>> {
    if scales.len() != model.layers().len() {
        return Err(SnnError::dims("layer scales", &[scales.len()], &[model.layers().len()]));
    }
    let mut prev = T::one();
    let mut layers = Vec::with_capacity(scales.len());
    for (l, &lambda) in model.layers().iter().zip(scales) {
        let ratio = prev / lambda;
        let w = l.weights.map(|w| w * ratio);
        let b = l.bias.iter().map(|&b| b / lambda).collect();
        layers.push(DenseLayer::new(w, b)?);
        prev = lambda;
    }
    MlpModel::from_layers(layers)
}

/// A converted network ready for inference.
#[derive(Debug)]
pub struct ConvertedSnn<T: Real> {
    pub network: Network<T>,
    pub scales: Vec<T>,
    /// Group names in order, `input` first and `output` last.
    pub layers: Vec<String>,
}

/// Membrane potential of hidden IF neurons at the start of an episode, as a
/// fraction of the threshold. Starting half way up turns the rate code's
/// truncation into rounding, which matters for very short simulations.
pub const INITIAL_VOLTAGE: f64 = 0.5;

pub fn convert<T: Real>(model: &MlpModel<T>, scales: &[T]) -> Result<ConvertedSnn<T>> {
    convert_with(model, scales, T::of(INITIAL_VOLTAGE))
}

/// [`convert`] with an explicit initial membrane potential for hidden neurons.
pub fn convert_with<T: Real>(model: &MlpModel<T>, scales: &[T], v_init: T) -> Result<ConvertedSnn<T>> {
    let scaled = scale_model(model, scales)?;
    let mut net = Network::new(T::one())
        .with_mode(SimulationMode::Episodic)
        .with_propagation(Propagation::Immediate);
    net.set_learning(false);
    net.add_group(INPUT, InputGroup::new(model.input_size()))?;
    let mut names = vec![INPUT.to_string()];
    let last = scaled.layers().len() - 1;
    for (k, l) in scaled.layers().iter().enumerate() {
        let name = if k == last { OUTPUT.to_string() } else { format!("hidden{}", k + 1) };
        if k == last {
            net.add_group(&name, AccumulatorGroup::new(l.outputs()).with_bias(l.bias.clone())?)?;
        } else {
            let group = SubtractiveIfGroup::new(l.outputs())
                .with_bias(l.bias.clone())?
                .with_initial_voltage(v_init);
            net.add_group(&name, group)?;
        }
        let pre = names.last().unwrap().clone();
        net.connect(&format!("{pre}->{name}"), &pre, &name, Connection::new(l.weights.clone()))?;
        names.push(name);
    }
    Ok(ConvertedSnn {
        network: net,
        scales: scales.to_vec(),
        layers: names,
    })
}

impl<T: Real> ConvertedSnn<T> {
    /// Output currents summed over `time` ms for inputs `(B, n)` in `[0, 1]`.
    pub fn output_totals(&mut self, images: BatchedTensor<T>, time: T, dt: T) -> Result<BatchedTensor<T>> {
        if time < dt {
            return Err(SnnError::Domain(format!("simulation time {time} is shorter than dt {dt}")));
        }
        self.network.set_dt(dt)?;
        let src = ConstantSource::new(images);
        self.network.run(&[(INPUT, &src)], time)?;
        Ok(self
            .network
            .group_as::<AccumulatorGroup<T>>(OUTPUT)?
            .total()
            .clone())
    }

    /// Predicted labels; ties go to the lowest class index.
    pub fn infer(&mut self, images: BatchedTensor<T>, time: T, dt: T) -> Result<Vec<usize>> {
        let totals = self.output_totals(images, time, dt)?;
        Ok((0..totals.batch())
            .map(|b| argmax(totals.sample(b).iter().copied()))
            .collect())
    }

    /// Accuracy in percent over `data`, simulated `batch` images at a time.
    pub fn evaluate(&mut self, data: &MnistDataset, time: T, dt: T, batch: usize) -> Result<f64> {
        let labels = self.predict_dataset(data, time, dt, batch)?;
        let correct = labels
            .iter()
            .zip(&data.labels)
            .filter(|(&p, &y)| p == y as usize)
            .count();
        Ok(100.0 * correct as f64 / data.len().max(1) as f64)
    }

    pub fn predict_dataset(&mut self, data: &MnistDataset, time: T, dt: T, batch: usize) -> Result<Vec<usize>> {
        if batch == 0 {
            return Err(SnnError::Domain("batch size must be at least 1".into()));
        }
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut out = Vec::with_capacity(data.len());
        for chunk in idx.chunks(batch) {
            let x = unit_inputs::<T>(data, chunk);
            let n = x.ncols();
            let images = BatchedTensor::from_vec(&[chunk.len(), n], x.into_raw_vec_and_offset().0)?;
            out.extend(self.infer(images, time, dt)?);
        }
        Ok(out)
    }
}
