//! `SNNW` weight files: a small little-endian container for dense layers.
//!
//! Layout: `b"SNNW"`, `version: u16`, `layers: u16`, then per layer
//! `rows: u32`, `cols: u32`, `rows·cols` f32 weights in row-major order
//! (`rows` = inputs, `cols` = outputs) and `cols` f32 biases.

use std::fs;
use std::path::Path;

use crate::error::{Result, SnnError};
use crate::scalar::Real;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"SNNW";
pub const VERSION: u16 = 1;

/// One dense layer, `y = x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(SnnError::dims("layer bias", &[bias.len()], &[weights.cols()]));
        }
        Ok(DenseLayer { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }
}

/// Size in bytes of the encoded file for the given layer shapes.
pub fn encoded_len(shapes: &[[usize; 2]]) -> usize {
    8 + shapes
        .iter()
        .map(|[r, c]| 8 + 4 * (r * c + c))
        .sum::<usize>()
}

pub fn encode_snnw<T: Real>(layers: &[DenseLayer<T>]) -> Result<Vec<u8>> {
    let count = u16::try_from(layers.len())
        .map_err(|_| SnnError::Domain(format!("{} layers do not fit a u16", layers.len())))?;
    let shapes: Vec<[usize; 2]> = layers.iter().map(|l| l.weights.shape()).collect();
    let mut out = Vec::with_capacity(encoded_len(&shapes));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for l in layers {
        for d in l.weights.shape() {
            let d = u32::try_from(d)
                .map_err(|_| SnnError::Domain(format!("layer dimension {d} does not fit a u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &w in l.weights.data().iter().chain(&l.bias) {
            out.extend_from_slice(&(w.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(SnnError::Format {
                offset: self.bytes.len() as u64,
                message: format!(
                    "truncated {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s<T: Real>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    }
}

pub fn decode_snnw<T: Real>(bytes: &[u8]) -> Result<Vec<DenseLayer<T>>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(SnnError::Format {
            offset: 0,
            message: "missing SNNW magic".into(),
        });
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(SnnError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = c.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for k in 0..count {
        let at = c.pos as u64;
        let rows = c.u32("layer header")? as usize;
        let cols = c.u32("layer header")? as usize;
        if let Some(prev) = layers.last().map(|l: &DenseLayer<T>| l.outputs()) {
            if prev != rows {
                return Err(SnnError::Format {
                    offset: at,
                    message: format!("layer {k} has {rows} inputs but previous layer has {prev} outputs"),
                });
            }
        }
        let w = c.f32s(rows.saturating_mul(cols), "weights")?;
        let b = c.f32s(cols, "bias")?;
        layers.push(DenseLayer::new(Matrix::from_vec(rows, cols, w)?, b)?);
    }
    if c.pos != bytes.len() {
        return Err(SnnError::Format {
            offset: c.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    Ok(layers)
}

pub fn write_snnw<T: Real>(path: &Path, layers: &[DenseLayer<T>]) -> Result<()> {
    fs::write(path, encode_snnw(layers)?).map_err(|e| SnnError::io(path, e))
}

pub fn read_snnw<T: Real>(path: &Path) -> Result<Vec<DenseLayer<T>>> {
    decode_snnw(&fs::read(path).map_err(|e| SnnError::io(path, e))?)
}
