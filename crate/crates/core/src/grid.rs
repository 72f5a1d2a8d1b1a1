//! 2-D image grids: float grids, probability maps, binary label maps, and
//! their on-disk raw formats (little-endian row-major blobs with a small
//! text header, plus binary PGM renderings for eyeballing).

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid: {rows}x{cols} shape implies {expected} values, got {actual}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("grid: shapes {0}x{1} and {2}x{3} differ")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("probability map: value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("label map: value {value} at index {index} is not 0 or 1")]
    NotBinary { index: usize, value: u8 },
    #[error("grid file {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> GridError {
    GridError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Dense row-major f64 grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GridError> {
        if rows * cols != data.len() {
            return Err(GridError::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Reverse every row (mirror across the vertical axis).
    pub fn flip_x(&mut self) {
        for r in 0..self.rows {
            self.data[r * self.cols..(r + 1) * self.cols].reverse();
        }
    }

    pub fn crop(&self, top: usize, left: usize, rows: usize, cols: usize) -> Result<Self, GridError> {
        if top + rows > self.rows || left + cols > self.cols {
            return Err(GridError::SizeMismatch(self.rows, self.cols, top + rows, left + cols));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let base = (top + r) * self.cols + left;
            data.extend_from_slice(&self.data[base..base + cols]);
        }
        Grid::new(rows, cols, data)
    }

    /// View as a [1, 1, rows, cols] network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, self.rows, self.cols], self.data.clone())
            .expect("grid is always shape-consistent")
    }

    pub fn write_f64(&self, path: &Path) -> Result<(), GridError> {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| io_err(path, e))
    }

    pub fn read_f64(path: &Path, rows: usize, cols: usize) -> Result<Self, GridError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        if bytes.len() != rows * cols * 8 {
            return Err(GridError::Format {
                path: path.display().to_string(),
                msg: format!("expected {} bytes for {rows}x{cols} f64, got {}", rows * cols * 8, bytes.len()),
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Grid::new(rows, cols, data)
    }
}

/// Per-pixel foreground probability in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap(Grid);

impl ProbabilityMap {
    pub fn new(grid: Grid) -> Result<Self, GridError> {
        for (i, &v) in grid.data().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(GridError::OutOfRange { index: i, value: v });
            }
        }
        Ok(ProbabilityMap(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    /// Extract channel 0 of a [1, 1, H, W] network output.
    pub fn from_tensor(t: &Tensor) -> Result<Self, GridError> {
        let shape = t.shape();
        let (rows, cols) = match shape {
            [1, 1, h, w] => (*h, *w),
            [h, w] => (*h, *w),
            _ => {
                return Err(GridError::Format {
                    path: "<tensor>".into(),
                    msg: format!("cannot view shape {shape:?} as a 2-D map"),
                })
            }
        };
        ProbabilityMap::new(Grid::new(rows, cols, t.data().to_vec())?)
    }
}

/// Binary decision grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self, GridError> {
        if rows * cols != data.len() {
            return Err(GridError::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some((i, &v)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(GridError::NotBinary { index: i, value: v });
        }
        Ok(LabelMap { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        LabelMap {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn at(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn flip_x(&mut self) {
        for r in 0..self.rows {
            self.data[r * self.cols..(r + 1) * self.cols].reverse();
        }
    }

    pub fn crop(&self, top: usize, left: usize, rows: usize, cols: usize) -> Result<Self, GridError> {
        if top + rows > self.rows || left + cols > self.cols {
            return Err(GridError::SizeMismatch(self.rows, self.cols, top + rows, left + cols));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let base = (top + r) * self.cols + left;
            data.extend_from_slice(&self.data[base..base + cols]);
        }
        LabelMap::new(rows, cols, data)
    }

    /// Binary values as a float grid (for loss targets).
    pub fn to_grid(&self) -> Grid {
        Grid::new(self.rows, self.cols, self.data.iter().map(|&v| f64::from(v)).collect())
            .expect("label map is shape-consistent")
    }

    pub fn write_u8(&self, path: &Path) -> Result<(), GridError> {
        fs::write(path, &self.data).map_err(|e| io_err(path, e))
    }

    pub fn read_u8(path: &Path, rows: usize, cols: usize) -> Result<Self, GridError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        if bytes.len() != rows * cols {
            return Err(GridError::Format {
                path: path.display().to_string(),
                msg: format!("expected {} bytes for {rows}x{cols} u8, got {}", rows * cols, bytes.len()),
            });
        }
        LabelMap::new(rows, cols, bytes)
    }
}

/// Write a text header describing a raw grid file: `shape R,C` / `dtype D`.
pub fn write_header(path: &Path, rows: usize, cols: usize, dtype: &str) -> Result<(), GridError> {
    let text = format!("shape {rows},{cols}\ndtype {dtype}\n");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_header(path: &Path) -> Result<(usize, usize, String), GridError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut shape = None;
    let mut dtype = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("shape ") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 2 {
                return Err(GridError::Format {
                    path: path.display().to_string(),
                    msg: format!("bad shape line `{line}`"),
                });
            }
            let r = parts[0].trim().parse().map_err(|_| GridError::Format {
                path: path.display().to_string(),
                msg: format!("bad shape line `{line}`"),
            })?;
            let c = parts[1].trim().parse().map_err(|_| GridError::Format {
                path: path.display().to_string(),
                msg: format!("bad shape line `{line}`"),
            })?;
            shape = Some((r, c));
        } else if let Some(rest) = line.strip_prefix("dtype ") {
            dtype = Some(rest.trim().to_string());
        }
    }
    match (shape, dtype) {
        (Some((r, c)), Some(d)) => Ok((r, c, d)),
        _ => Err(GridError::Format {
            path: path.display().to_string(),
            msg: "missing shape or dtype".into(),
        }),
    }
}

/// 8-bit binary PGM (P5) with linear [0, 1] -> [0, 255] mapping; values are
/// clamped first, so any float grid renders.
pub fn write_pgm(path: &Path, grid: &Grid) -> Result<(), GridError> {
    let mut out = Vec::with_capacity(grid.len() + 32);
    write!(out, "P5\n{} {}\n255\n", grid.cols(), grid.rows()).expect("vec write");
    for &v in grid.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}
