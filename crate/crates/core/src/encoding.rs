//! Input encoders: Bernoulli-per-step Poisson spike trains and constant
//! analog currents.

use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::engine::InputSource;
use crate::error::{Result, SnnError};
use crate::rng::{bernoulli_row, Rng};
use crate::scalar::Real;
use crate::tensor::{BatchedTensor, TimeSeries};

fn steps_in(time: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(SnnError::Domain(format!("dt must be positive, got {dt}")));
    }
    let ratio = time / dt;
    let steps = ratio.round();
    if !(ratio >= 0.0) || (ratio - steps).abs() > 1e-6 {
        return Err(SnnError::Domain(format!(
            "time {time} ms is not a whole number of {dt} ms steps"
        )));
    }
    Ok(steps as usize)
}

/// Spike source drawing `Bernoulli(rate · dt / 1000)` for every neuron,
/// sample and step. Sample `b` uses RNG stream `rng.stream() + b`.
#[derive(Clone, Debug)]
pub struct PoissonSource {
    probs: Vec<f64>,
    batch: usize,
    size: usize,
    rng: Rng,
}

impl PoissonSource {
    /// Rates in Hz, `(B, n)`.
    pub fn from_rates<T: Real>(rates: &BatchedTensor<T>, dt: T, rng: Rng) -> Result<Self> {
        let scale = dt.as_f64() / 1000.0;
        let mut probs = Vec::with_capacity(rates.data().len());
        for (idx, &r) in rates.data().iter().enumerate() {
            let r = r.as_f64();
            let p = r * scale;
            if !(r >= 0.0) || !(p <= 1.0) {
                return Err(SnnError::Domain(format!(
                    "rate {r} Hz at index {idx} gives spike probability {p} per {} ms step",
                    dt
                )));
            }
            probs.push(p);
        }
        Ok(PoissonSource {
            probs,
            batch: rates.batch(),
            size: rates.sample_len(),
            rng,
        })
    }

    /// Pixel intensities in `[0, 255]`; the rate is half the intensity (so
    /// at most 127.5 Hz).
    pub fn from_pixels<T: Real>(intensities: &BatchedTensor<T>, dt: T, rng: Rng) -> Result<Self> {
        let half = T::of(0.5);
        let rates = BatchedTensor::from_vec(
            intensities.shape(),
            intensities.data().iter().map(|&x| x * half).collect(),
        )?;
        Self::from_rates(&rates, dt, rng)
    }

    pub fn probability(&self, b: usize, i: usize) -> f64 {
        self.probs[b * self.size + i]
    }

    /// Materialises `steps` frames.
    pub fn encode<T: Real>(&self, steps: usize) -> TimeSeries<T> {
        let mut ts = TimeSeries::zeros(steps, self.batch, self.size);
        for t in 0..steps {
            self.add_step(t, ts.step_mut(t)).expect("frame sized by construction");
        }
        ts
    }
}

impl<T: Real> InputSource<T> for PoissonSource {
    fn batch(&self) -> usize {
        self.batch
    }
    fn size(&self) -> usize {
        self.size
    }
    fn steps(&self) -> Option<usize> {
        None
    }
    fn add_step(&self, t: usize, out: &mut [T]) -> Result<()> {
        if out.len() != self.batch * self.size {
            return Err(SnnError::dims("poisson frame", &[out.len()], &[self.batch, self.size]));
        }
        let n = self.size.max(1);
        let row = |(b, (o, p)): (usize, (&mut [T], &[f64]))| {
            let mut draws = vec![T::zero(); o.len()];
            bernoulli_row(&self.rng, b as u64, t as u64, |i| p[i], &mut draws);
            for (o, d) in o.iter_mut().zip(draws) {
                *o += d;
            }
        };
        if self.batch > 1 && out.len() >= 1 << 14 {
            out.par_chunks_mut(n)
                .zip(self.probs.par_chunks(n))
                .enumerate()
                .for_each(row);
        } else {
            out.chunks_mut(n)
                .zip(self.probs.chunks(n))
                .enumerate()
                .for_each(row);
        }
        Ok(())
    }
}

/// Poisson spike trains for pixel intensities in `[0, 255]`, `(T, B, n)`.
pub fn poisson_encode<T: Real>(
    intensities: &BatchedTensor<T>,
    time: T,
    dt: T,
    rng: Rng,
) -> Result<TimeSeries<T>> {
    let steps = steps_in(time.as_f64(), dt.as_f64())?;
    Ok(PoissonSource::from_pixels(intensities, dt, rng)?.encode(steps))
}

/// Poisson spike trains for rates given directly in Hz, `(T, B, n)`.
pub fn poisson_encode_rates<T: Real>(
    rates: &BatchedTensor<T>,
    time: T,
    dt: T,
    rng: Rng,
) -> Result<TimeSeries<T>> {
    let steps = steps_in(time.as_f64(), dt.as_f64())?;
    Ok(PoissonSource::from_rates(rates, dt, rng)?.encode(steps))
}

/// Rates drawn uniformly from `[0, max_hz]`, `(B, n)`.
pub fn uniform_rates<T: Real>(batch: usize, n: usize, max_hz: T, rng: &Rng) -> Result<BatchedTensor<T>> {
    let dist = Uniform::new_inclusive(0.0, max_hz.as_f64())
        .map_err(|e| SnnError::Domain(e.to_string()))?;
    let mut out = BatchedTensor::zeros(&[batch, n]);
    for b in 0..batch {
        let mut g = rng.generator(b as u64);
        for x in out.sample_mut(b) {
            *x = T::of(dist.sample(&mut g));
        }
    }
    Ok(out)
}

/// The same analog frame on every step.
#[derive(Clone, Debug)]
pub struct ConstantSource<T> {
    values: BatchedTensor<T>,
}

impl<T: Real> ConstantSource<T> {
    pub fn new(values: BatchedTensor<T>) -> Self {
        ConstantSource { values }
    }
}

impl<T: Real> InputSource<T> for ConstantSource<T> {
    fn batch(&self) -> usize {
        self.values.batch()
    }
    fn size(&self) -> usize {
        self.values.sample_len()
    }
    fn steps(&self) -> Option<usize> {
        None
    }
    fn add_step(&self, _t: usize, out: &mut [T]) -> Result<()> {
        if out.len() != self.values.data().len() {
            return Err(SnnError::dims(
                "constant frame",
                &[out.len()],
                self.values.shape(),
            ));
        }
        for (o, &x) in out.iter_mut().zip(self.values.data()) {
            *o += x;
        }
        Ok(())
    }
}

/// Repeats `values` (B, n) on each of `time / dt` steps.
pub fn analog_repeat<T: Real>(values: &BatchedTensor<T>, time: T, dt: T) -> Result<TimeSeries<T>> {
    let steps = steps_in(time.as_f64(), dt.as_f64())?;
    let mut data = Vec::with_capacity(steps * values.data().len());
    for _ in 0..steps {
        data.extend_from_slice(values.data());
    }
    TimeSeries::from_vec(steps, values.batch(), values.sample_len(), data)
}
