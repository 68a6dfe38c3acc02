//! Spike-count labelling of unsupervised neurons.

use crate::error::{Result, SnnError};
use crate::mlp::argmax;

pub const CLASSES: usize = 10;

/// Label per neuron plus the per-class mean spike counts it was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronAssignments {
    pub labels: Vec<usize>,
    /// `n_neurons × 10`, row-major.
    pub rates: Vec<f64>,
}

impl NeuronAssignments {
    pub fn n_neurons(&self) -> usize {
        self.labels.len()
    }

    pub fn rate(&self, neuron: usize, class: usize) -> f64 {
        self.rates[neuron * CLASSES + class]
    }
}

fn check_counts(counts: &[f64], rows: usize, n: usize) -> Result<()> {
    if counts.len() != rows * n {
        return Err(SnnError::dims("spike counts", &[counts.len()], &[rows, n]));
    }
    Ok(())
}

/// Assigns each neuron the class with the highest mean spike count per
/// example. `counts` is `examples × n_neurons`. Ties go to the lowest class;
/// an absent class has rate 0.
pub fn assign_labels(counts: &[f64], labels: &[u8], n_neurons: usize) -> Result<NeuronAssignments> {
    check_counts(counts, labels.len(), n_neurons)?;
    let mut per_class = [0usize; CLASSES];
    let mut rates = vec![0.0; n_neurons * CLASSES];
    for (row, &y) in counts.chunks(n_neurons.max(1)).zip(labels) {
        let y = y as usize;
        if y >= CLASSES {
            return Err(SnnError::Domain(format!("label {y} out of range")));
        }
        per_class[y] += 1;
        for (i, &c) in row.iter().enumerate() {
            rates[i * CLASSES + y] += c;
        }
    }
    for i in 0..n_neurons {
        for (c, &k) in per_class.iter().enumerate() {
            if k > 0 {
                rates[i * CLASSES + c] /= k as f64;
            }
        }
    }
    let labels = (0..n_neurons)
        .map(|i| argmax(rates[i * CLASSES..(i + 1) * CLASSES].iter().copied()))
        .collect();
    Ok(NeuronAssignments { labels, rates })
}

/// Predicts one label per row of `counts` (`B × n_neurons`): the class whose
/// assigned neurons have the highest mean spike count. Classes without
/// neurons score 0; ties go to the lowest class.
pub fn classify(counts: &[f64], assignments: &NeuronAssignments) -> Result<Vec<usize>> {
    let n = assignments.n_neurons();
    if n == 0 || !counts.len().is_multiple_of(n) {
        return Err(SnnError::dims("spike counts", &[counts.len()], &[n]));
    }
    let mut members = [0usize; CLASSES];
    for &l in &assignments.labels {
        members[l] += 1;
    }
    Ok(counts
        .chunks(n)
        .map(|row| {
            let mut bins = [0.0f64; CLASSES];
            for (&c, &l) in row.iter().zip(&assignments.labels) {
                bins[l] += c;
            }
            for (b, &m) in bins.iter_mut().zip(&members) {
                if m > 0 {
                    *b /= m as f64;
                }
            }
            argmax(bins)
        })
        .collect())
}

/// Percentage of `predicted` equal to `truth`.
pub fn accuracy(predicted: &[usize], truth: &[u8]) -> f64 {
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(&p, &t)| p == t as usize)
        .count();
    100.0 * hits as f64 / truth.len().max(1) as f64
}
