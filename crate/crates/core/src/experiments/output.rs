//! CSV and PGM artifacts.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Result, SnnError};
use crate::scalar::Real;
use crate::tensor::Matrix;

fn csv_err(path: &Path, e: csv::Error) -> SnnError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SnnError::io(path, io),
        other => SnnError::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `rows` under a header row. The header is written even when there
/// are no rows.
pub fn emit_csv<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| SnnError::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SnnError::io(path, e))
}

/// Min-max scales `m` to 0..=255 as a binary (P5) PGM. A constant matrix
/// becomes all zeros.
pub fn pgm_bytes<T: Real>(m: &Matrix<T>) -> Vec<u8> {
    let (lo, hi) = m
        .data()
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.data().iter().map(|&x| {
        if span > T::zero() {
            ((x - lo) / span * T::of(255.0)).round().as_f64().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn emit_pgm<T: Real>(m: &Matrix<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| SnnError::io(dir, e))?;
    }
    fs::write(path, pgm_bytes(m)).map_err(|e| SnnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        name: String,
        value: f64,
    }

    #[test]
    fn empty_csv_has_only_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        emit_csv::<Row>(&p, &["name", "value"], &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "name,value\n");
    }

    #[test]
    fn csv_round_trips_through_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/b.csv");
        let rows = vec![
            Row { name: "plain".into(), value: 1.5 },
            Row { name: "has,comma \"q\"".into(), value: -2.0 },
        ];
        emit_csv(&p, &["name", "value"], &rows).unwrap();
        let mut r = csv::Reader::from_path(&p).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["name", "value"]);
        let back: Vec<(String, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
        assert_eq!(back, vec![("plain".into(), 1.5), ("has,comma \"q\"".into(), -2.0)]);
    }

    #[test]
    fn pgm_scaling() {
        let m = Matrix::from_rows(&[[0.0f32, 0.5], [1.0, 0.25]]).unwrap();
        let b = pgm_bytes(&m);
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&b[..header.len()], header);
        assert_eq!(&b[header.len()..], &[0, 128, 255, 64]);
        let flat = Matrix::filled(3, 4, 7.0f64);
        let b = pgm_bytes(&flat);
        assert!(b[b.len() - 12..].iter().all(|&x| x == 0));
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, b"x").unwrap();
        let bad = file.join("nested.pgm");
        let err = emit_pgm(&Matrix::<f32>::zeros(1, 1), &bad).unwrap_err();
        assert!(err.to_string().contains("f"), "{err}");
    }
}
