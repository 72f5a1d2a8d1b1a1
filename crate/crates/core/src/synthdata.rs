//! Synthetic ambiguous-segmentation dataset with known ground truth.
//!
//! Each sample starts from a hidden per-pixel foreground probability map
//! `p_true` built from smooth radial bumps. The image correlates with
//! `p_true` but adds background texture, noise, and "confusers" -- bright
//! compact structures with zero foreground probability that imitate the
//! lookalike pathologies and artifacts that make real annotations ambiguous.
//! The single annotation is a superlevel set of `p_true` at a per-sample
//! threshold `tau_a`, so annotators with different thresholds in mind
//! include more or less of each bump's soft rim, which is exactly the
//! ambiguity the estimators are meant to recover. Because `p_true` is kept,
//! probability-map quality is directly measurable.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{Grid, GridError, LabelMap, ProbabilityMap};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset config: {0}")]
    InvalidConfig(String),
    #[error("crop {patch} exceeds grid {grid}")]
    PatchTooLarge { patch: usize, grid: usize },
    #[error("k-fold: k = {k} exceeds {n} samples")]
    TooManyFolds { k: usize, n: usize },
    #[error("dataset {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Generator settings. Ranges are inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n_samples: usize,
    /// Square grid extent.
    pub grid: usize,
    pub blob_count: (usize, usize),
    /// Radial scale (sigma) of the foreground bumps, in pixels.
    pub blob_scale: (f64, f64),
    pub confuser_count: (usize, usize),
    pub noise_std: f64,
    /// Annotator threshold tau_a is drawn uniformly from this range.
    pub tau_range: (f64, f64),
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_samples: 200,
            grid: 128,
            blob_count: (1, 3),
            blob_scale: (6.0, 12.0),
            confuser_count: (0, 3),
            noise_std: 0.03,
            tau_range: (0.35, 0.65),
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.grid == 0 {
            return Err(DataError::InvalidConfig("grid extent must be positive".into()));
        }
        if self.blob_count.0 > self.blob_count.1 {
            return Err(DataError::InvalidConfig("blob_count range is inverted".into()));
        }
        if self.confuser_count.0 > self.confuser_count.1 {
            return Err(DataError::InvalidConfig("confuser_count range is inverted".into()));
        }
        if !(self.blob_scale.0 > 0.0 && self.blob_scale.1 >= self.blob_scale.0) {
            return Err(DataError::InvalidConfig("blob_scale range is invalid".into()));
        }
        if self.noise_std < 0.0 {
            return Err(DataError::InvalidConfig("noise_std must be >= 0".into()));
        }
        if !(self.tau_range.0 > 0.0
            && self.tau_range.1 < 1.0
            && self.tau_range.0 <= self.tau_range.1)
        {
            return Err(DataError::InvalidConfig(
                "tau_range must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::InvalidConfig(
                "train_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub seed: u64,
    pub index: usize,
    pub blob_count: usize,
    /// The annotator threshold this sample's annotation was cut at.
    pub annot_tau: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: Grid,
    pub annotation: LabelMap,
    pub p_true: ProbabilityMap,
    pub meta: SampleMeta,
}

struct Bump {
    cy: f64,
    cx: f64,
    sigma: f64,
    peak: f64,
}

fn add_bump(field: &mut Grid, bump: &Bump) {
    let inv = 1.0 / (2.0 * bump.sigma * bump.sigma);
    let cols = field.cols();
    for r in 0..field.rows() {
        let dy = r as f64 - bump.cy;
        for c in 0..cols {
            let dx = c as f64 - bump.cx;
            let v = bump.peak * (-(dy * dy + dx * dx) * inv).exp();
            let cur = field.at(r, c);
            field.set(r, c, cur + v);
        }
    }
}

/// Intensity added to the image per unit of foreground probability.
const LESION_GAIN: f64 = 0.55;
/// Flat background level.
const BACKGROUND_LEVEL: f64 = 0.15;

/// Generate one sample. Draw order is fixed; the per-sample generator state
/// comes from `Rng::for_sample(config.seed, index)`, so samples are
/// identical whether produced serially or in parallel.
pub fn generate_sample(config: &DatasetConfig, index: usize) -> Result<SyntheticSample, DataError> {
    config.validate()?;
    let mut rng = Rng::for_sample(config.seed, index as u64);
    let g = config.grid;
    let gf = g as f64;

    // Foreground bumps -> p_true.
    let n_blobs = rng.int_in(config.blob_count.0, config.blob_count.1);
    let mut p_true = Grid::zeros(g, g);
    for _ in 0..n_blobs {
        let bump = Bump {
            cy: rng.range(0.15 * gf, 0.85 * gf),
            cx: rng.range(0.15 * gf, 0.85 * gf),
            sigma: rng.range(config.blob_scale.0, config.blob_scale.1),
            peak: rng.range(0.75, 1.0),
        };
        add_bump(&mut p_true, &bump);
    }
    for v in p_true.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    // Annotation: superlevel set of p_true at a per-sample threshold.
    let annot_tau = rng.range(config.tau_range.0, config.tau_range.1);
    let annotation = LabelMap::new(
        g,
        g,
        p_true
            .data()
            .iter()
            .map(|&v| u8::from(v >= annot_tau))
            .collect(),
    )?;

    // Image: foreground brightening plus confusers, texture, and noise.
    let mut image = Grid::zeros(g, g);
    for (iv, pv) in image.data_mut().iter_mut().zip(p_true.data()) {
        *iv = BACKGROUND_LEVEL + LESION_GAIN * pv;
    }
    let n_confusers = rng.int_in(config.confuser_count.0, config.confuser_count.1);
    for _ in 0..n_confusers {
        // Compact and bright: intensity overlapping the lesions' range but
        // with a much smaller spatial scale, and no p_true contribution.
        let bump = Bump {
            cy: rng.range(0.05 * gf, 0.95 * gf),
            cx: rng.range(0.05 * gf, 0.95 * gf),
            sigma: rng.range(1.5, 3.0),
            peak: rng.range(0.35, 0.6),
        };
        add_bump(&mut image, &bump);
    }
    for _ in 0..3 {
        // Broad, low-amplitude background texture.
        let bump = Bump {
            cy: rng.range(0.0, gf),
            cx: rng.range(0.0, gf),
            sigma: rng.range(gf / 4.0, gf / 2.0),
            peak: rng.range(-0.06, 0.06),
        };
        add_bump(&mut image, &bump);
    }
    if config.noise_std > 0.0 {
        for v in image.data_mut() {
            *v += rng.normal() * config.noise_std;
        }
    }
    for v in image.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    Ok(SyntheticSample {
        image,
        annotation,
        p_true: ProbabilityMap::new(p_true)?,
        meta: SampleMeta {
            seed: config.seed,
            index,
            blob_count: n_blobs,
            annot_tau,
        },
    })
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<SyntheticSample>, DataError> {
    config.validate()?;
    (0..config.n_samples)
        .map(|i| generate_sample(config, i))
        .collect()
}

// ── Augmentations ───────────────────────────────────────────────────

/// Gamma correction over the image's own intensity range; constant images
/// pass through unchanged.
pub fn gamma_correct(image: &Grid, gamma: f64) -> Grid {
    let lo = image.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return image.clone();
    }
    let span = hi - lo;
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = ((*v - lo) / span).powf(gamma) * span + lo;
    }
    out
}

/// Gamma range of the random contrast augmentation.
pub const GAMMA_RANGE: (f64, f64) = (0.5, 4.5);

/// Random contrast adjustment: gamma ~ U(0.5, 4.5).
pub fn random_gamma(image: &Grid, rng: &mut Rng) -> Grid {
    let gamma = rng.range(GAMMA_RANGE.0, GAMMA_RANGE.1);
    gamma_correct(image, gamma)
}

/// Probability of the joint horizontal flip.
pub const FLIP_PROBABILITY: f64 = 0.1;

/// Flip image, annotation and p_true together with probability `p`.
/// Returns whether the flip happened.
pub fn random_flip(sample: &mut SyntheticSample, rng: &mut Rng, p: f64) -> bool {
    if rng.bernoulli(p) {
        sample.image.flip_x();
        sample.annotation.flip_x();
        let mut grid = sample.p_true.clone().into_grid();
        grid.flip_x();
        sample.p_true = ProbabilityMap::new(grid).expect("flip preserves range");
        true
    } else {
        false
    }
}

/// Aligned random crop of (image, annotation, p_true); the origin is uniform
/// over all in-bounds positions.
pub fn random_crop(
    sample: &SyntheticSample,
    patch: usize,
    rng: &mut Rng,
) -> Result<(Grid, LabelMap, ProbabilityMap), DataError> {
    let g = sample.image.rows();
    if patch > g {
        return Err(DataError::PatchTooLarge { patch, grid: g });
    }
    let top = rng.int_in(0, g - patch);
    let left = rng.int_in(0, g - patch);
    let image = sample.image.crop(top, left, patch, patch)?;
    let annotation = sample.annotation.crop(top, left, patch, patch)?;
    let p_true = ProbabilityMap::new(sample.p_true.grid().crop(top, left, patch, patch)?)?;
    Ok((image, annotation, p_true))
}

/// Foreground-biased crop: retry a uniform crop until the annotation patch
/// contains foreground, up to `retries` extra draws, keeping the last draw
/// otherwise. `retries = 0` is exactly [`random_crop`].
pub fn random_crop_biased(
    sample: &SyntheticSample,
    patch: usize,
    rng: &mut Rng,
    retries: usize,
) -> Result<(Grid, LabelMap, ProbabilityMap), DataError> {
    let mut crop = random_crop(sample, patch, rng)?;
    for _ in 0..retries {
        if crop.1.count_foreground() > 0 {
            break;
        }
        crop = random_crop(sample, patch, rng)?;
    }
    Ok(crop)
}

// ── Splits ──────────────────────────────────────────────────────────

/// Disjoint, exhaustive, seed-deterministic train/validation index split.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Rng::for_stream(seed, "split");
    rng.shuffle(&mut indices);
    let n_train = ((n as f64) * train_fraction).floor() as usize;
    let val = indices.split_off(n_train);
    (indices, val)
}

/// k disjoint, exhaustive, seed-deterministic folds. Sizes differ by at most
/// one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if k == 0 || k > n {
        return Err(DataError::TooManyFolds { k, n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Rng::for_stream(seed, "kfold");
    rng.shuffle(&mut indices);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(indices[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

// ── Disk format ─────────────────────────────────────────────────────

pub const DATASET_FORMAT_VERSION: u32 = 1;

fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:06}")
}

/// Write a dataset directory: `dataset.manifest` plus one subdirectory per
/// sample holding `image.f64`, `annotation.u8`, `ptrue.f64` and a `header`.
pub fn save_dataset(
    dir: &Path,
    config: &DatasetConfig,
    samples: &[SyntheticSample],
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut manifest = String::new();
    manifest.push_str(&format!("format_version {DATASET_FORMAT_VERSION}\n"));
    manifest.push_str(&format!("n_samples {}\n", samples.len()));
    manifest.push_str(&format!("grid {}\n", config.grid));
    manifest.push_str(&format!(
        "blob_count {},{}\n",
        config.blob_count.0, config.blob_count.1
    ));
    manifest.push_str(&format!(
        "blob_scale {:e},{:e}\n",
        config.blob_scale.0, config.blob_scale.1
    ));
    manifest.push_str(&format!(
        "confuser_count {},{}\n",
        config.confuser_count.0, config.confuser_count.1
    ));
    manifest.push_str(&format!("noise_std {:e}\n", config.noise_std));
    manifest.push_str(&format!(
        "tau_range {:e},{:e}\n",
        config.tau_range.0, config.tau_range.1
    ));
    manifest.push_str(&format!("train_fraction {:e}\n", config.train_fraction));
    manifest.push_str(&format!("seed {}\n", config.seed));
    for i in 0..samples.len() {
        manifest.push_str(&format!("sample {}\n", sample_dir_name(i)));
    }
    fs::write(dir.join("dataset.manifest"), manifest)
        .map_err(|e| io_err(&dir.join("dataset.manifest"), e))?;

    for (i, sample) in samples.iter().enumerate() {
        let sdir = dir.join(sample_dir_name(i));
        fs::create_dir_all(&sdir).map_err(|e| io_err(&sdir, e))?;
        sample.image.write_f64(&sdir.join("image.f64"))?;
        sample.annotation.write_u8(&sdir.join("annotation.u8"))?;
        sample.p_true.grid().write_f64(&sdir.join("ptrue.f64"))?;
        let header = format!(
            "shape {},{}\nimage image.f64 f64\nannotation annotation.u8 u8\nptrue ptrue.f64 f64\n\
             seed {}\nindex {}\nblob_count {}\nannot_tau {:e}\n",
            sample.image.rows(),
            sample.image.cols(),
            sample.meta.seed,
            sample.meta.index,
            sample.meta.blob_count,
            sample.meta.annot_tau,
        );
        fs::write(sdir.join("header"), header).map_err(|e| io_err(&sdir.join("header"), e))?;
    }
    Ok(())
}

/// Sample names listed in a dataset manifest, in manifest order.
pub fn dataset_sample_names(dir: &Path) -> Result<Vec<String>, DataError> {
    let path = dir.join("dataset.manifest");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.strip_prefix("sample "))
        .map(|s| s.trim().to_string())
        .collect())
}

pub fn load_sample(dir: &Path, name: &str) -> Result<SyntheticSample, DataError> {
    let sdir = dir.join(name);
    let header_path = sdir.join("header");
    let text = fs::read_to_string(&header_path).map_err(|e| io_err(&header_path, e))?;
    let mut shape = None;
    let mut meta = SampleMeta {
        seed: 0,
        index: 0,
        blob_count: 0,
        annot_tau: 0.0,
    };
    for line in text.lines() {
        let Some((key, rest)) = line.trim().split_once(' ') else {
            continue;
        };
        match key {
            "shape" => {
                let parts: Vec<&str> = rest.split(',').collect();
                if parts.len() != 2 {
                    return Err(DataError::Format {
                        path: header_path.display().to_string(),
                        msg: format!("bad shape `{rest}`"),
                    });
                }
                let parse = |s: &str| {
                    s.trim().parse::<usize>().map_err(|_| DataError::Format {
                        path: header_path.display().to_string(),
                        msg: format!("bad shape `{rest}`"),
                    })
                };
                shape = Some((parse(parts[0])?, parse(parts[1])?));
            }
            "seed" => meta.seed = rest.trim().parse().unwrap_or(0),
            "index" => meta.index = rest.trim().parse().unwrap_or(0),
            "blob_count" => meta.blob_count = rest.trim().parse().unwrap_or(0),
            "annot_tau" => meta.annot_tau = rest.trim().parse().unwrap_or(0.0),
            _ => {}
        }
    }
    let (rows, cols) = shape.ok_or_else(|| DataError::Format {
        path: header_path.display().to_string(),
        msg: "missing shape".into(),
    })?;
    Ok(SyntheticSample {
        image: Grid::read_f64(&sdir.join("image.f64"), rows, cols)?,
        annotation: LabelMap::read_u8(&sdir.join("annotation.u8"), rows, cols)?,
        p_true: ProbabilityMap::new(Grid::read_f64(&sdir.join("ptrue.f64"), rows, cols)?)?,
        meta,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Vec<(String, SyntheticSample)>, DataError> {
    dataset_sample_names(dir)?
        .into_iter()
        .map(|name| load_sample(dir, &name).map(|s| (name, s)))
        .collect()
}

pub fn sample_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(sample_dir_name(index))
}
