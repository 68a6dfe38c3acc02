//! Dense ReLU perceptron trained with softmax cross-entropy and minibatch
//! SGD with momentum.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SnnError};
use crate::mnist::{MnistDataset, PIXELS};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::snnw::{read_snnw, write_snnw, DenseLayer};
use crate::tensor::Matrix;

/// Layer widths of the MNIST classifier.
pub const MNIST_ARCH: [usize; 4] = [PIXELS, 256, 128, 10];

fn view<T: Real>(m: &Matrix<T>) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((m.rows(), m.cols()), m.data()).expect("matrix buffer matches shape")
}

fn view_mut<T: Real>(m: &mut Matrix<T>) -> ArrayViewMut2<'_, T> {
    let shape = (m.rows(), m.cols());
    ArrayViewMut2::from_shape(shape, m.data_mut()).expect("matrix buffer matches shape")
}

/// Feed-forward network: ReLU on every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T> {
    layers: Vec<DenseLayer<T>>,
}

/// Per-layer parameter gradients, same shapes as the model.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub bias: Vec<Array1<T>>,
}

impl<T: Real> MlpModel<T> {
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(SnnError::Config("a model needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(SnnError::dims(
                    "layer chain",
                    &w[0].weights.shape(),
                    &w[1].weights.shape(),
                ));
            }
        }
        if layers
            .iter()
            .any(|l| !l.weights.data().iter().chain(&l.bias).all(|x| x.is_finite()))
        {
            return Err(SnnError::Domain("model parameters must be finite".into()));
        }
        Ok(MlpModel { layers })
    }

    /// He-normal weights and zero biases.
    pub fn init(sizes: &[usize], rng: &Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(SnnError::Config("need at least input and output widths".into()));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (k, pair) in sizes.windows(2).enumerate() {
            let (rows, cols) = (pair[0], pair[1]);
            let std = (2.0 / rows as f64).sqrt();
            let dist = Normal::new(0.0, std).map_err(|e| SnnError::Domain(e.to_string()))?;
            let mut g = rng.fork(k as u64).generator(0);
            let w = (0..rows * cols).map(|_| T::of(dist.sample(&mut g))).collect();
            layers.push(DenseLayer::new(Matrix::from_vec(rows, cols, w)?, vec![T::zero(); cols])?);
        }
        Self::from_layers(layers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_layers(read_snnw(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_snnw(path, &self.layers)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs())
            .chain(self.layers.iter().map(|l| l.outputs()))
            .collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_size() {
            return Err(SnnError::dims("model input", &[x.nrows(), x.ncols()], &[self.input_size()]));
        }
        Ok(())
    }

    /// Outputs of every layer (after ReLU on hidden layers, raw logits last).
    pub fn activations(&self, x: ArrayView2<T>) -> Result<Vec<Array2<T>>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut outs: Vec<Array2<T>> = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let input = if k == 0 { x } else { outs[k - 1].view() };
            let mut z = input.dot(&view(&l.weights));
            z += &ArrayView2::from_shape((1, l.bias.len()), &l.bias).unwrap();
            if k < last {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            outs.push(z);
        }
        Ok(outs)
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.activations(x)?.pop().expect("at least one layer"))
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(x)?))
    }

    /// Mean softmax cross-entropy over the rows of `x`.
    pub fn loss(&self, x: ArrayView2<T>, labels: &[usize]) -> Result<T> {
        let logits = self.forward(x)?;
        check_labels(&logits, labels)?;
        Ok(softmax_xent(&logits, labels).0)
    }

    /// Loss and backpropagated gradients for one minibatch.
    pub fn gradients(&self, x: ArrayView2<T>, labels: &[usize]) -> Result<(T, Gradients<T>)> {
        let acts = self.activations(x)?;
        let logits = acts.last().unwrap();
        check_labels(logits, labels)?;
        let (loss, mut delta) = softmax_xent(logits, labels);
        let n = self.layers.len();
        let mut gw = vec![Array2::zeros((0, 0)); n];
        let mut gb = vec![Array1::zeros(0); n];
        for k in (0..n).rev() {
            let input = if k == 0 { x } else { acts[k - 1].view() };
            gw[k] = input.t().dot(&delta);
            gb[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&view(&self.layers[k].weights).t());
                back.zip_mut_with(&acts[k - 1], |d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = back;
            }
        }
        Ok((loss, Gradients { weights: gw, bias: gb }))
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.data().iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Classification accuracy in percent over a whole dataset.
    pub fn accuracy(&self, data: &MnistDataset) -> Result<f64> {
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(1000) {
            let pred = self.predict(unit_inputs::<T>(data, chunk).view())?;
            correct += pred
                .iter()
                .zip(chunk)
                .filter(|(&p, &i)| p == data.labels[i] as usize)
                .count();
        }
        Ok(100.0 * correct as f64 / data.len().max(1) as f64)
    }
}

fn check_labels<T: Real>(logits: &Array2<T>, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.nrows() {
        return Err(SnnError::dims("labels", &[labels.len()], &[logits.nrows()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(SnnError::Domain(format!("label {bad} out of range for {} classes", logits.ncols())));
    }
    Ok(())
}

/// Mean loss and its gradient with respect to the logits.
fn softmax_xent<T: Real>(logits: &Array2<T>, labels: &[usize]) -> (T, Array2<T>) {
    let n = T::of(logits.nrows() as f64);
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        loss += s.ln() - (row[y].ln());
        row.mapv_inplace(|v| v / s / n);
        row[y] -= T::one() / n;
    }
    (loss / n, grad)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(m: &Array2<T>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect()
}

pub fn argmax<T: PartialOrd>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Images scaled into `[0, 1]`, one row per index.
pub fn unit_inputs<T: Real>(data: &MnistDataset, indices: &[usize]) -> Array2<T> {
    let scale = 1.0 / 255.0;
    let mut x = Array2::zeros((indices.len(), PIXELS));
    for (mut row, &i) in x.rows_mut().into_iter().zip(indices) {
        for (o, &p) in row.iter_mut().zip(data.image(i)) {
            *o = T::of(p as f64 * scale);
        }
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    /// Multiplies the learning rate after each epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            lr: 0.05,
            momentum: 0.9,
            batch: 64,
            lr_decay: 0.85,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Trains a fresh model with architecture `sizes`. `on_epoch` sees the model
/// after every epoch.
pub fn train_mlp<T: Real>(
    data: &MnistDataset,
    sizes: &[usize],
    cfg: &TrainConfig,
    rng: &Rng,
    mut on_epoch: impl FnMut(&MlpModel<T>, &EpochStats),
) -> Result<MlpModel<T>> {
    if cfg.batch == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(SnnError::Config(format!("invalid training settings {cfg:?}")));
    }
    let mut model = MlpModel::init(sizes, &rng.fork(1))?;
    let mut vel_w: Vec<Array2<T>> = model
        .layers
        .iter()
        .map(|l| Array2::zeros((l.inputs(), l.outputs())))
        .collect();
    let mut vel_b: Vec<Array1<T>> = model.layers.iter().map(|l| Array1::zeros(l.outputs())).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mu = T::of(cfg.momentum);
    let mut lr = cfg.lr;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng.fork(1000 + epoch as u64).generator(0));
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let x = unit_inputs::<T>(data, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i] as usize).collect();
            let (loss, g) = model.gradients(x.view(), &y)?;
            if !loss.is_finite() {
                return Err(SnnError::Training(format!(
                    "loss became {loss} at epoch {epoch}, batch {b}; try a lower learning rate"
                )));
            }
            total += loss.as_f64();
            batches += 1;
            let step = T::of(lr);
            for (k, l) in model.layers.iter_mut().enumerate() {
                vel_w[k].zip_mut_with(&g.weights[k], |v, &d| *v = mu * *v - step * d);
                vel_b[k].zip_mut_with(&g.bias[k], |v, &d| *v = mu * *v - step * d);
                view_mut(&mut l.weights).zip_mut_with(&vel_w[k], |w, &v| *w += v);
                for (bias, &v) in l.bias.iter_mut().zip(vel_b[k].iter()) {
                    *bias += v;
                }
            }
        }
        if !model.all_finite() {
            return Err(SnnError::Training(format!(
                "parameters diverged in epoch {epoch}; try a lower learning rate"
            )));
        }
        on_epoch(
            &model,
            &EpochStats {
                epoch,
                mean_loss: total / batches.max(1) as f64,
                lr,
            },
        );
        lr *= cfg.lr_decay;
    }
    Ok(model)
}
