//! Matrix containers and the PMAT1 on-disk format.
//!
//! Images are stored flattened row-major: a source or observation row of
//! length `t` is a `height × width` image with `height * width == t`.
//!
//! A PMAT1 file is the 5 byte magic `PMAT1`, one line of JSON
//! (`rows`, `cols`, `height`, `width`, `role`) terminated by `\n`, then
//! `rows * cols` little-endian `f64` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the column norm of a mixing matrix.
pub const COLUMN_NORM_SLACK: f64 = 1e-12;

pub const MAGIC: &[u8; 5] = b"PMAT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixRole {
    Observations,
    Sources,
    Mixing,
}

/// JSON header of a PMAT1 file. `height` and `width` are 0 for matrices
/// that carry no image grid (mixing matrices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixHeader {
    pub rows: u64,
    pub cols: u64,
    pub height: u64,
    pub width: u64,
    pub role: MatrixRole,
}

fn first_invalid(data: &ArrayView2<f64>) -> Result<()> {
    for ((row, col), &value) in data.indexed_iter() {
        if !value.is_finite() {
            return Err(Error::NonFiniteEntry { row, col });
        }
        if value < 0.0 {
            return Err(Error::NegativeEntry { row, col, value });
        }
    }
    Ok(())
}

fn check_grid(cols: usize, height: usize, width: usize) -> Result<()> {
    if cols == 0 {
        return Err(Error::Shape("matrix must have at least one column".into()));
    }
    if height.checked_mul(width) != Some(cols) {
        return Err(Error::Shape(format!(
            "grid {height}x{width} does not match {cols} samples"
        )));
    }
    Ok(())
}

/// Nonnegative count data, `m` channels by `t` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    data: Array2<f64>,
    height: usize,
    width: usize,
}

impl ObservationMatrix {
    pub fn new(data: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Shape("observations need at least one channel".into()));
        }
        check_grid(data.ncols(), height, width)?;
        first_invalid(&data.view())?;
        Ok(Self {
            data,
            height,
            width,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn header(&self) -> MatrixHeader {
        MatrixHeader {
            rows: self.data.nrows() as u64,
            cols: self.data.ncols() as u64,
            height: self.height as u64,
            width: self.width as u64,
            role: MatrixRole::Observations,
        }
    }
}

/// Nonnegative source images stacked as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMatrix {
    data: Array2<f64>,
    height: usize,
    width: usize,
}

impl SourceMatrix {
    pub fn new(data: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Shape("need at least one source".into()));
        }
        check_grid(data.ncols(), height, width)?;
        first_invalid(&data.view())?;
        Ok(Self {
            data,
            height,
            width,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn sources(&self) -> usize {
        self.data.nrows()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn header(&self) -> MatrixHeader {
        MatrixHeader {
            rows: self.data.nrows() as u64,
            cols: self.data.ncols() as u64,
            height: self.height as u64,
            width: self.width as u64,
            role: MatrixRole::Sources,
        }
    }
}

/// Mixing matrix with columns in the set C: nonnegative entries and
/// column l2-norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    data: Array2<f64>,
}

impl MixingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape("mixing matrix must be non-empty".into()));
        }
        first_invalid(&data.view())?;
        for (col, column) in data.columns().into_iter().enumerate() {
            let norm = column.dot(&column).sqrt();
            if norm > 1.0 + COLUMN_NORM_SLACK {
                return Err(Error::ColumnNorm { col, norm });
            }
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn sources(&self) -> usize {
        self.data.ncols()
    }

    pub fn header(&self) -> MatrixHeader {
        MatrixHeader {
            rows: self.data.nrows() as u64,
            cols: self.data.ncols() as u64,
            height: 0,
            width: 0,
            role: MatrixRole::Mixing,
        }
    }
}

fn payload_len(rows: u64, cols: u64) -> Option<usize> {
    let rows = usize::try_from(rows).ok()?;
    let cols = usize::try_from(cols).ok()?;
    rows.checked_mul(cols)?.checked_mul(8)
}

/// Encodes a matrix in PMAT1 layout.
pub fn encode_matrix(matrix: &ArrayView2<f64>, header: &MatrixHeader) -> Result<Vec<u8>> {
    if header.rows != matrix.nrows() as u64 || header.cols != matrix.ncols() as u64 {
        return Err(Error::Shape(format!(
            "header says {}x{}, matrix is {}x{}",
            header.rows,
            header.cols,
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let payload = payload_len(header.rows, header.cols)
        .ok_or_else(|| Error::Shape("matrix dimensions overflow".into()))?;
    let json = serde_json::to_string(header).expect("header serializes");
    let mut bytes = Vec::with_capacity(MAGIC.len() + json.len() + 1 + payload);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(json.as_bytes());
    bytes.push(b'\n');
    for &value in matrix.iter() {
        bytes.extend_from_slice(&value.to_le_bytes());
    }
    Ok(bytes)
}

/// Decodes a PMAT1 byte buffer. `path` is only used in error messages.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<(Array2<f64>, MatrixHeader)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let rest = &bytes[MAGIC.len()..];
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: "missing newline after header".into(),
        })?;
    let header: MatrixHeader =
        serde_json::from_slice(&rest[..newline]).map_err(|e| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let expected = payload_len(header.rows, header.cols).ok_or_else(|| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: "dimensions overflow".into(),
    })?;
    let payload = &rest[newline + 1..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("8 byte chunk")))
        .collect();
    let data = Array2::from_shape_vec((header.rows as usize, header.cols as usize), values)
        .map_err(|e| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok((data, header))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_matrix(path: impl AsRef<Path>, matrix: &ArrayView2<f64>, header: &MatrixHeader) -> Result<()> {
    let bytes = encode_matrix(matrix, header)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<(Array2<f64>, MatrixHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

pub fn write_observations(path: impl AsRef<Path>, x: &ObservationMatrix) -> Result<()> {
    write_matrix(path, &x.data().view(), &x.header())
}

pub fn write_sources(path: impl AsRef<Path>, s: &SourceMatrix) -> Result<()> {
    write_matrix(path, &s.data().view(), &s.header())
}

pub fn write_mixing(path: impl AsRef<Path>, a: &MixingMatrix) -> Result<()> {
    write_matrix(path, &a.data().view(), &a.header())
}

pub fn read_observations(path: impl AsRef<Path>) -> Result<ObservationMatrix> {
    let (data, header) = read_matrix(path)?;
    ObservationMatrix::new(data, header.height as usize, header.width as usize)
}

pub fn read_sources(path: impl AsRef<Path>) -> Result<SourceMatrix> {
    let (data, header) = read_matrix(path)?;
    SourceMatrix::new(data, header.height as usize, header.width as usize)
}

pub fn read_mixing(path: impl AsRef<Path>) -> Result<MixingMatrix> {
    let (data, _) = read_matrix(path)?;
    MixingMatrix::new(data)
}
