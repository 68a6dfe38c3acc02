//! Dense batched arrays and the kernels the simulator is built from.
//!
//! Every time-dependent quantity lives in a [`BatchedTensor`] whose leading
//! dimension is the minibatch. Shared parameters (weights) are plain
//! [`Matrix`] values and are never replicated across the batch.
//!
//! Accumulations run in the scalar type with a fixed order (input index
//! ascending per output element), so a batched kernel produces bitwise the
//! same rows as running each sample on its own, whatever the thread count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::scalar::Real;

/// Below this many output elements the batch loop stays on the calling thread.
const PAR_MIN_ELEMS: usize = 1 << 14;

/// Row-major array whose leading dimension is the batch size.
///
/// Rank 2 `(B, N)` holds per-neuron state; rank 3 `(B, rows, cols)` holds
/// per-sample synaptic quantities such as STDP deltas.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchedTensor<T> {
    data: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Real> BatchedTensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!(
            (2..=3).contains(&shape.len()) && shape[0] >= 1,
            "batched tensor needs rank 2 or 3 and batch >= 1, got {shape:?}"
        );
        BatchedTensor {
            data: vec![value; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    /// Like [`BatchedTensor::zeros`] but reports allocation failure instead of aborting.
    pub fn try_zeros(shape: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&shape.len()) || shape[0] == 0 {
            return Err(SnnError::Domain(format!(
                "batched tensor needs rank 2 or 3 and batch >= 1, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::new();
        data.try_reserve_exact(len)
            .map_err(|_| SnnError::Allocation {
                bytes: len.saturating_mul(T::BYTES),
            })?;
        data.resize(len, T::zero());
        Ok(BatchedTensor {
            data,
            shape: shape.to_vec(),
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if !(2..=3).contains(&shape.len()) || shape[0] == 0 {
            return Err(SnnError::Domain(format!(
                "batched tensor needs rank 2 or 3 and batch >= 1, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(SnnError::dims("tensor data", &[data.len()], &[expected]));
        }
        Ok(BatchedTensor {
            data,
            shape: shape.to_vec(),
        })
    }

    /// Builds a `(B, N)` tensor from equally sized rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| SnnError::Domain("no rows given".into()))?
            .as_ref()
            .len();
        let mut data = Vec::with_capacity(rows.len() * first);
        for row in rows {
            let row = row.as_ref();
            if row.len() != first {
                return Err(SnnError::dims("tensor rows", &[first], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(&[rows.len(), first], data)
    }

    /// Stacks single-sample tensors along the batch dimension.
    pub fn stack(parts: &[BatchedTensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| SnnError::Domain("nothing to stack".into()))?;
        let inner = &first.shape[1..];
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if &p.shape[1..] != inner {
                return Err(SnnError::dims("stack", &first.shape, &p.shape));
            }
            batch += p.batch();
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(inner);
        Self::from_vec(&shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements in one batch slice.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Copies one batch slice out as a batch-of-one tensor.
    pub fn select(&self, b: usize) -> Self {
        let mut shape = self.shape.clone();
        shape[0] = 1;
        BatchedTensor {
            data: self.sample(b).to_vec(),
            shape,
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * T::BYTES
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Shared (unbatched) row-major matrix, used for weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SnnError::dims("matrix data", &[data.len()], &[rows, cols]));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(SnnError::dims("matrix rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Column sums, accumulated row by row.
    pub fn column_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (s, &w) in sums.iter_mut().zip(row) {
                *s += w;
            }
        }
        sums
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * T::BYTES
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Time-major recording or input sequence of shape `(T, B, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries<T> {
    steps: usize,
    batch: usize,
    size: usize,
    data: Vec<T>,
}

impl<T: Real> TimeSeries<T> {
    pub fn zeros(steps: usize, batch: usize, size: usize) -> Self {
        TimeSeries {
            steps,
            batch,
            size,
            data: vec![T::zero(); steps * batch * size],
        }
    }

    pub fn from_vec(steps: usize, batch: usize, size: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != steps * batch * size {
            return Err(SnnError::dims(
                "time series data",
                &[data.len()],
                &[steps, batch, size],
            ));
        }
        Ok(TimeSeries {
            steps,
            batch,
            size,
            data,
        })
    }

    /// Empty series that grows one step at a time.
    pub(crate) fn recorder(batch: usize, size: usize) -> Self {
        TimeSeries {
            steps: 0,
            batch,
            size,
            data: Vec::new(),
        }
    }

    pub(crate) fn push_step(&mut self, frame: &[T]) {
        debug_assert_eq!(frame.len(), self.batch * self.size);
        self.data.extend_from_slice(frame);
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.steps, self.batch, self.size]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// The `(B, N)` frame at step `t`.
    pub fn step(&self, t: usize) -> &[T] {
        let n = self.batch * self.size;
        &self.data[t * n..(t + 1) * n]
    }

    pub(crate) fn step_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.batch * self.size;
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Steps `start..end` as a new series.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.steps {
            return Err(SnnError::dims("time window", &[start, end], &[self.steps]));
        }
        let frame = self.batch * self.size;
        Self::from_vec(end - start, self.batch, self.size, self.data[start * frame..end * frame].to_vec())
    }

    pub fn get(&self, t: usize, b: usize, i: usize) -> T {
        self.data[(t * self.batch + b) * self.size + i]
    }

    /// Extracts one batch element as a batch-of-one series.
    pub fn select(&self, b: usize) -> Self {
        let mut data = Vec::with_capacity(self.steps * self.size);
        for t in 0..self.steps {
            let start = (t * self.batch + b) * self.size;
            data.extend_from_slice(&self.data[start..start + self.size]);
        }
        TimeSeries {
            steps: self.steps,
            batch: 1,
            size: self.size,
            data,
        }
    }

    /// Concatenates batch-of-k series along the batch dimension.
    pub fn stack(parts: &[TimeSeries<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| SnnError::Domain("nothing to stack".into()))?;
        let batch: usize = parts.iter().map(|p| p.batch).sum();
        let mut data = Vec::with_capacity(first.steps * batch * first.size);
        for p in parts {
            if p.steps != first.steps || p.size != first.size {
                return Err(SnnError::dims("time series stack", &first.shape(), &p.shape()));
            }
        }
        for t in 0..first.steps {
            for p in parts {
                data.extend_from_slice(p.step(t));
            }
        }
        TimeSeries::from_vec(first.steps, batch, first.size, data)
    }

    /// Sums over time, giving a `(B, N)` tensor (e.g. spike counts).
    pub fn sum_over_time(&self) -> BatchedTensor<T> {
        let mut out = BatchedTensor::zeros(&[self.batch.max(1), self.size]);
        for t in 0..self.steps {
            for (o, &x) in out.data_mut().iter_mut().zip(self.step(t)) {
                *o += x;
            }
        }
        out
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * T::BYTES
    }
}

/// Batch-dimension reduction applied to per-sample parameter updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
    Max,
}

impl Reduction {
    pub fn name(self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
            Reduction::Max => "max",
        }
    }

    /// Reduces one element's per-sample values (in batch order).
    pub fn reduce<T: Real>(self, values: impl IntoIterator<Item = T>) -> T {
        let mut count = 0usize;
        let mut acc: Option<T> = None;
        for v in values {
            count += 1;
            acc = Some(match (self, acc) {
                (_, None) => v,
                (Reduction::Max, Some(a)) => a.max(v),
                (_, Some(a)) => a + v,
            });
        }
        let acc = acc.unwrap_or_else(T::zero);
        match self {
            Reduction::Mean if count > 0 => acc / T::from_usize(count).unwrap(),
            _ => acc,
        }
    }
}

impl FromStr for Reduction {
    type Err = SnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            "max" => Ok(Reduction::Max),
            other => Err(SnnError::Config(format!(
                "unknown reduction `{other}` (expected mean, sum or max)"
            ))),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `out[b, j] = Σ_i input[b, i] · weights[i, j]` for a `(B, N_pre)` input.
pub fn matmul_batch<T: Real>(
    input: &BatchedTensor<T>,
    weights: &Matrix<T>,
) -> Result<BatchedTensor<T>> {
    let mut out = BatchedTensor::zeros(&[input.batch(), weights.cols()]);
    matmul_batch_acc(input, weights, out.data_mut())?;
    Ok(out)
}

/// Adds `input · weights` into a `(B, N_post)` buffer.
///
/// Zero inputs are skipped; for binary spike trains this turns the product
/// into a sum of the weight rows of the neurons that fired. The per-element
/// summation order is always `i` ascending.
pub fn matmul_batch_acc<T: Real>(
    input: &BatchedTensor<T>,
    weights: &Matrix<T>,
    out: &mut [T],
) -> Result<()> {
    if input.shape().len() != 2 || input.shape()[1] != weights.rows() {
        return Err(SnnError::dims("matmul_batch", input.shape(), &weights.shape()));
    }
    let n_pre = weights.rows();
    let n_post = weights.cols();
    if out.len() != input.batch() * n_post {
        return Err(SnnError::dims(
            "matmul_batch output",
            &[out.len()],
            &[input.batch(), n_post],
        ));
    }
    if n_post == 0 {
        return Ok(());
    }
    let kernel = |(row_out, row_in): (&mut [T], &[T])| {
        for (i, &x) in row_in.iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            let w = weights.row(i);
            for (o, &wij) in row_out.iter_mut().zip(w) {
                *o += x * wij;
            }
        }
    };
    if input.batch() > 1 && out.len() >= PAR_MIN_ELEMS {
        out.par_chunks_mut(n_post)
            .zip(input.data().par_chunks(n_pre.max(1)))
            .for_each(kernel);
    } else {
        out.chunks_mut(n_post)
            .zip(input.data().chunks(n_pre.max(1)))
            .for_each(kernel);
    }
    Ok(())
}

/// Collapses a `(B, rows, cols)` tensor over its batch dimension.
pub fn reduce_batch<T: Real>(deltas: &BatchedTensor<T>, method: Reduction) -> Result<Matrix<T>> {
    let shape = deltas.shape();
    if shape.len() != 3 {
        return Err(SnnError::dims("reduce_batch", shape, &[0, 0, 0]));
    }
    let (batch, rows, cols) = (shape[0], shape[1], shape[2]);
    let mut out = deltas.sample(0).to_vec();
    for b in 1..batch {
        let slice = deltas.sample(b);
        match method {
            Reduction::Max => out.iter_mut().zip(slice).for_each(|(o, &d)| *o = o.max(d)),
            Reduction::Mean | Reduction::Sum => {
                out.iter_mut().zip(slice).for_each(|(o, &d)| *o += d)
            }
        }
    }
    if method == Reduction::Mean && batch > 1 {
        let n = T::from_usize(batch).unwrap();
        out.iter_mut().for_each(|o| *o /= n);
    }
    Matrix::from_vec(rows, cols, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_rows_select_weight_rows() {
        let s = BatchedTensor::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let w = Matrix::from_rows(&[[2.0f32, 3.0], [5.0, 7.0]]).unwrap();
        let out = matmul_batch(&s, &w).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn zero_spikes_give_zero_current() {
        let s = BatchedTensor::<f32>::zeros(&[3, 2]);
        let w = Matrix::from_rows(&[[2.0f32, 3.0], [5.0, 7.0]]).unwrap();
        let out = matmul_batch(&s, &w).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_dot_product() {
        let s = BatchedTensor::from_rows(&[[1.0f32, 1.0]]).unwrap();
        let w = Matrix::from_rows(&[[0.1f32, 0.2], [0.3, 0.4]]).unwrap();
        let out = matmul_batch(&s, &w).unwrap();
        // oracle: explicit dot products, same order
        let expect = [0.1f32 + 0.3, 0.2f32 + 0.4];
        assert_eq!(out.data(), &expect);
        assert!((out.data()[0] - 0.4).abs() < 1e-6);
        assert!((out.data()[1] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let s = BatchedTensor::<f32>::zeros(&[2, 3]);
        let w = Matrix::<f32>::zeros(2, 2);
        let err = matmul_batch(&s, &w).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn reduce_identity_at_batch_one() {
        let d = BatchedTensor::from_vec(&[1, 2, 2], vec![0.5f32, -1.0, 0.0, 3.0]).unwrap();
        for m in [Reduction::Mean, Reduction::Sum, Reduction::Max] {
            assert_eq!(reduce_batch(&d, m).unwrap().data(), d.data());
        }
    }

    #[test]
    fn reduce_definitions_at_one_synapse() {
        let d = BatchedTensor::from_vec(&[3, 1, 1], vec![0.0f32, 0.2, 0.1]).unwrap();
        assert_eq!(reduce_batch(&d, Reduction::Max).unwrap().data(), &[0.2]);
        let mean = reduce_batch(&d, Reduction::Mean).unwrap().data()[0];
        assert!((mean - 0.1).abs() < 1e-7);
    }

    #[test]
    fn unknown_reduction_is_config_error() {
        assert!(matches!("median".parse::<Reduction>(), Err(SnnError::Config(_))));
        assert_eq!("MAX".parse::<Reduction>().unwrap(), Reduction::Max);
    }

    #[test]
    fn max_keeps_sign() {
        let d = BatchedTensor::from_vec(&[2, 1, 1], vec![-0.3f32, -0.1]).unwrap();
        assert_eq!(reduce_batch(&d, Reduction::Max).unwrap().data(), &[-0.1]);
    }

    #[test]
    fn time_series_select_and_stack_invert() {
        let data: Vec<f32> = (0..24).map(|x| x as f32).collect();
        let ts = TimeSeries::from_vec(3, 4, 2, data).unwrap();
        let parts: Vec<_> = (0..4).map(|b| ts.select(b)).collect();
        assert_eq!(TimeSeries::stack(&parts).unwrap(), ts);
        assert_eq!(ts.get(2, 1, 1), ts.select(1).get(2, 0, 1));
    }
}
