//! Inference: sliding-window prediction, probability-map marginalization
//! for both ensemble kinds, thresholding, and entropy uncertainty.

use std::path::Path;

use thiserror::Error;

use crate::grid::{Grid, GridError, LabelMap, ProbabilityMap};
use crate::losses::TverskyParams;
use crate::models::{HyperModel, ModelError, PlainModel};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("sliding window: patch {patch} exceeds image {rows}x{cols}")]
    PatchTooLarge {
        patch: usize,
        rows: usize,
        cols: usize,
    },
    #[error("sliding window: overlap {0} outside [0, 1)")]
    BadOverlap(f64),
    #[error("ensemble: no probability maps to average")]
    EmptyEnsemble,
    #[error("ensemble: map {index} is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    MapShapeMismatch {
        index: usize,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("predictor output shape {0:?} does not match its input patch")]
    BadPredictorOutput(Vec<usize>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Anything that maps an image patch [1, 1, h, w] to a probability patch of
/// the same shape.
pub trait PatchPredictor {
    fn predict(&self, patch: &Tensor) -> Result<Tensor, InferError>;
}

impl PatchPredictor for PlainModel {
    fn predict(&self, patch: &Tensor) -> Result<Tensor, InferError> {
        Ok(self.forward_eval(patch)?)
    }
}

/// A hypernetwork evaluated at one fixed loss hyperparameter.
pub struct HyperAt<'a> {
    pub model: &'a HyperModel,
    pub h: TverskyParams,
}

impl PatchPredictor for HyperAt<'_> {
    fn predict(&self, patch: &Tensor) -> Result<Tensor, InferError> {
        Ok(self.model.forward_eval(patch, &self.h)?)
    }
}

/// Default window overlap fraction.
pub const DEFAULT_OVERLAP: f64 = 0.8;

/// Window start positions covering `extent` with stride `stride`, clamping
/// the final window to the edge. Every pixel is covered at least once.
fn window_starts(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut pos = 0;
    loop {
        if pos + patch >= extent {
            starts.push(extent - patch);
            break;
        }
        starts.push(pos);
        pos += stride;
    }
    starts
}

/// Tile the image with overlapping square patches, predict each, and average
/// the predictions per pixel. A window equal to the image reproduces the
/// direct forward exactly (one window, divided by one).
pub fn sliding_window_predict(
    image: &Grid,
    model: &dyn PatchPredictor,
    patch: usize,
    overlap: f64,
) -> Result<ProbabilityMap, InferError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(InferError::BadOverlap(overlap));
    }
    let (rows, cols) = (image.rows(), image.cols());
    if patch > rows || patch > cols {
        return Err(InferError::PatchTooLarge { patch, rows, cols });
    }
    let stride = ((patch as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let row_starts = window_starts(rows, patch, stride);
    let col_starts = window_starts(cols, patch, stride);

    let mut sum = vec![0.0; rows * cols];
    let mut count = vec![0u32; rows * cols];
    for &top in &row_starts {
        for &left in &col_starts {
            let tile = image.crop(top, left, patch, patch)?;
            let pred = model.predict(&tile.to_tensor())?;
            if pred.shape() != [1, 1, patch, patch] {
                return Err(InferError::BadPredictorOutput(pred.shape().to_vec()));
            }
            let data = pred.data();
            for r in 0..patch {
                let out_base = (top + r) * cols + left;
                let in_base = r * patch;
                for c in 0..patch {
                    sum[out_base + c] += data[in_base + c];
                    count[out_base + c] += 1;
                }
            }
        }
    }
    debug_assert!(count.iter().all(|&c| c > 0), "coverage gap");
    let values: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| s / f64::from(c))
        .collect();
    Ok(ProbabilityMap::new(Grid::new(rows, cols, values)?)?)
}

/// Pointwise arithmetic mean with uniform weights 1/N.
pub fn average_probability_maps(maps: &[ProbabilityMap]) -> Result<ProbabilityMap, InferError> {
    let first = maps.first().ok_or(InferError::EmptyEnsemble)?;
    let (rows, cols) = (first.rows(), first.cols());
    let mut sum = vec![0.0; rows * cols];
    for (i, map) in maps.iter().enumerate() {
        if map.rows() != rows || map.cols() != cols {
            return Err(InferError::MapShapeMismatch {
                index: i,
                rows: map.rows(),
                cols: map.cols(),
                expected_rows: rows,
                expected_cols: cols,
            });
        }
        for (acc, v) in sum.iter_mut().zip(map.data()) {
            *acc += v;
        }
    }
    let n = maps.len() as f64;
    for v in &mut sum {
        *v /= n;
    }
    Ok(ProbabilityMap::new(Grid::new(rows, cols, sum)?)?)
}

/// Default inference grid for the hypernetwork ensemble: alpha from 0.1 to
/// 0.9 in steps of 0.1.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

/// Hypernetwork ensemble: sliding-window predictions at each grid
/// hyperparameter, averaged with uniform weights. Costs one full inference
/// pass per grid point.
pub fn hyper_ensemble_predict(
    image: &Grid,
    model: &HyperModel,
    alpha_grid: &[f64],
    patch: usize,
    overlap: f64,
) -> Result<ProbabilityMap, InferError> {
    if alpha_grid.is_empty() {
        return Err(InferError::EmptyEnsemble);
    }
    let mut maps = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let h = TverskyParams::new(alpha).map_err(|_| InferError::BadThreshold(alpha))?;
        let at = HyperAt { model, h };
        maps.push(sliding_window_predict(image, &at, patch, overlap)?);
    }
    average_probability_maps(&maps)
}

/// Foreground where p >= tau; ties count as foreground, so tau = 0 marks
/// everything and tau just above max(p) marks nothing.
pub fn threshold_map(p: &ProbabilityMap, tau: f64) -> Result<LabelMap, InferError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(InferError::BadThreshold(tau));
    }
    Ok(LabelMap::new(
        p.rows(),
        p.cols(),
        p.data().iter().map(|&v| u8::from(v >= tau)).collect(),
    )?)
}

/// Stabilizer inside the entropy logarithms.
pub const ENTROPY_EPSILON: f64 = 5e-5;

/// Binary entropy per pixel, natural log, with epsilon stabilization:
/// H = -sum_labels (p_l + eps) ln(p_l + eps). Maximal at p = 0.5 (about
/// ln 2), near zero at polarized pixels, symmetric under p -> 1 - p.
pub fn entropy_map(p: &ProbabilityMap, epsilon: f64) -> Grid {
    let term = |x: f64| -> f64 { -(x + epsilon) * (x + epsilon).ln() };
    let values: Vec<f64> = p.data().iter().map(|&v| term(v) + term(1.0 - v)).collect();
    Grid::new(p.rows(), p.cols(), values).expect("same shape as input")
}

/// Write a probability (or entropy) grid as raw f64 + header + PGM preview.
pub fn export_map(dir: &Path, stem: &str, grid: &Grid) -> Result<(), GridError> {
    grid.write_f64(&dir.join(format!("{stem}.f64")))?;
    crate::grid::write_header(
        &dir.join(format!("{stem}.header")),
        grid.rows(),
        grid.cols(),
        "f64",
    )?;
    crate::grid::write_pgm(&dir.join(format!("{stem}.pgm")), grid)
}
