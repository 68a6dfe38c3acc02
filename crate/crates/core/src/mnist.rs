//! MNIST in the IDX format (big-endian headers, magic 2051 / 2049).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, SnnError};
use crate::scalar::Real;
use crate::tensor::BatchedTensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// Environment variable consulted when no data directory is given.
pub const DATA_DIR_ENV: &str = "SNN_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug)]
pub struct MnistDataset {
    pub split: Split,
    /// `len × 784` raw intensities, row-major.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Keeps the first `n` examples.
    pub fn truncate(&mut self, n: usize) {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.images.truncate(n * PIXELS);
    }

    /// Raw `[0, 255]` intensities of the given examples as `(B, 784)`.
    pub fn batch_raw<T: Real>(&self, indices: &[usize]) -> BatchedTensor<T> {
        self.batch_scaled(indices, 1.0)
    }

    /// Intensities scaled into `[0, 1]` as `(B, 784)`.
    pub fn batch_unit<T: Real>(&self, indices: &[usize]) -> BatchedTensor<T> {
        self.batch_scaled(indices, 1.0 / 255.0)
    }

    fn batch_scaled<T: Real>(&self, indices: &[usize], scale: f64) -> BatchedTensor<T> {
        let data = indices
            .iter()
            .flat_map(|&i| self.image(i).iter().map(move |&p| T::of(p as f64 * scale)))
            .collect();
        BatchedTensor::from_vec(&[indices.len().max(1), PIXELS], data)
            .expect("indices non-empty")
    }
}

/// Data directory from an explicit flag, else `$SNN_DATA_DIR`, else `./data/mnist`.
pub fn resolve_data_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| SnnError::Format {
            offset: self.pos as u64,
            message: "truncated header".into(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| SnnError::io(path, e))
}

/// Parses an IDX3 image file, returning `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != IMAGE_MAGIC {
        return Err(SnnError::Format {
            offset: 0,
            message: format!("image magic {magic}, expected {IMAGE_MAGIC}"),
        });
    }
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let need = count * rows * cols;
    let body = &bytes[r.pos..];
    if body.len() != need {
        return Err(SnnError::Format {
            offset: (r.pos + body.len().min(need)) as u64,
            message: format!("expected {need} pixel bytes, found {}", body.len()),
        });
    }
    Ok((count, rows, cols, body.to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != LABEL_MAGIC {
        return Err(SnnError::Format {
            offset: 0,
            message: format!("label magic {magic}, expected {LABEL_MAGIC}"),
        });
    }
    let count = r.u32()? as usize;
    let body = &bytes[r.pos..];
    if body.len() != count {
        return Err(SnnError::Format {
            offset: (r.pos + body.len().min(count)) as u64,
            message: format!("expected {count} labels, found {}", body.len()),
        });
    }
    if let Some(k) = body.iter().position(|&l| l > 9) {
        return Err(SnnError::Format {
            offset: (r.pos + k) as u64,
            message: format!("label {} out of range", body[k]),
        });
    }
    Ok(body.to_vec())
}

pub fn load_mnist(dir: &Path, split: Split) -> Result<MnistDataset> {
    let img_path = dir.join(format!("{}-images-idx3-ubyte", split.prefix()));
    let lbl_path = dir.join(format!("{}-labels-idx1-ubyte", split.prefix()));
    let (count, rows, cols, images) = parse_images(&read_file(&img_path)?)?;
    if (rows, cols) != (SIDE, SIDE) {
        return Err(SnnError::Format {
            offset: 8,
            message: format!("{}: images are {rows}x{cols}, expected 28x28", img_path.display()),
        });
    }
    let labels = parse_labels(&read_file(&lbl_path)?)?;
    if labels.len() != count {
        return Err(SnnError::Format {
            offset: 4,
            message: format!("{count} images but {} labels", labels.len()),
        });
    }
    Ok(MnistDataset {
        split,
        images,
        labels,
    })
}
