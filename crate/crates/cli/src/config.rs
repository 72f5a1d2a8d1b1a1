//! Flat key-value run configuration.
//!
//! A config file holds `key = value` lines (`#` comments allowed); the same
//! `key=value` syntax works as command-line overrides, which win over the
//! file. Unknown keys are rejected. Every run echoes its effective
//! configuration back into the output directory so artifacts are
//! self-describing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use segprob_core::models::{ModelKind, ModelSpec};
use segprob_core::synthdata::DatasetConfig;
use segprob_core::trainer::{Strategy, TrainConfig};

/// Version stamp written into every echoed config.
pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    // dataset.*
    pub n_samples: usize,
    pub grid: usize,
    pub blob_count: (usize, usize),
    pub blob_scale: (f64, f64),
    pub confuser_count: (usize, usize),
    pub noise_std: f64,
    pub tau_range: (f64, f64),
    pub train_fraction: f64,
    // model.*
    pub model_kind: ModelKind,
    pub kernel_depths: Vec<usize>,
    pub input_channels: usize,
    pub kernel_size: usize,
    pub hypervector_size: usize,
    pub mapping_layers: usize,
    // train.*
    pub strategy: Strategy,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: Option<f64>,
    pub weight_decay: f64,
    pub patch: usize,
    pub alpha_grid: Vec<f64>,
    pub ensemble_size: usize,
    pub dropout_rate: f64,
    pub fg_crop_retries: usize,
    pub augment: bool,
    // loss.*
    pub smooth: f64,
    pub dice_ce_mix: f64,
    // predict.*
    pub predict_alpha_grid: Vec<f64>,
    pub predict_patch: Option<usize>,
    pub overlap: f64,
    pub taus: Vec<f64>,
    // metrics.*
    pub metrics_tau_step: f64,
}

impl RunConfig {
    fn defaults(seed: u64) -> Self {
        let d = DatasetConfig::default();
        RunConfig {
            seed,
            n_samples: d.n_samples,
            grid: d.grid,
            blob_count: d.blob_count,
            blob_scale: d.blob_scale,
            confuser_count: d.confuser_count,
            noise_std: d.noise_std,
            tau_range: d.tau_range,
            train_fraction: d.train_fraction,
            model_kind: ModelKind::Plain,
            kernel_depths: vec![8, 16, 32, 64],
            input_channels: 1,
            kernel_size: 3,
            hypervector_size: 16,
            mapping_layers: 3,
            strategy: Strategy::SingleDiceCe,
            epochs: 60,
            minibatch: 8,
            lr: None,
            weight_decay: segprob_core::trainer::DEFAULT_WEIGHT_DECAY,
            patch: 64,
            alpha_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            ensemble_size: 5,
            dropout_rate: 0.1,
            fg_crop_retries: 4,
            augment: true,
            smooth: 1.0,
            dice_ce_mix: 0.5,
            predict_alpha_grid: segprob_core::infer::default_alpha_grid(),
            predict_patch: None,
            overlap: segprob_core::infer::DEFAULT_OVERLAP,
            taus: vec![0.25, 0.5, 0.75],
            metrics_tau_step: 0.05,
        }
    }

    /// Parse a config file (optional) merged with `key=value` overrides;
    /// overrides win. `seed` must be set by one of them.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        let mut order: Vec<(String, String)> = Vec::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    ConfigError(format!(
                        "{}:{}: expected `key = value`, got `{line}`",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                order.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        for item in overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                ConfigError(format!("override `{item}` is not of the form key=value"))
            })?;
            order.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in order {
            pairs.insert(k, v); // later entries (overrides) win
        }

        let seed = match pairs.remove("seed") {
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| ConfigError(format!("bad seed `{v}`")))?,
            None => return Err(ConfigError("`seed` is mandatory".into())),
        };
        let mut cfg = RunConfig::defaults(seed);
        let mut unknown = Vec::new();
        for (key, value) in &pairs {
            if !cfg.apply(key, value)? {
                unknown.push(key.clone());
            }
        }
        if !unknown.is_empty() {
            return Err(ConfigError(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| ConfigError(format!("bad value `{v}` for `{key}`")))
        }
        fn pair_usize(key: &str, v: &str) -> Result<(usize, usize)> {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(ConfigError(format!("`{key}` wants `lo,hi`, got `{v}`")));
            }
            Ok((p(key, parts[0])?, p(key, parts[1])?))
        }
        fn pair_f64(key: &str, v: &str) -> Result<(f64, f64)> {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(ConfigError(format!("`{key}` wants `lo,hi`, got `{v}`")));
            }
            Ok((p(key, parts[0])?, p(key, parts[1])?))
        }
        fn list_f64(key: &str, v: &str) -> Result<Vec<f64>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|s| p(key, s.trim())).collect()
        }
        fn list_usize(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',').map(|s| p(key, s.trim())).collect()
        }
        match key {
            "format_version" => {
                let ver: u32 = p(key, value)?;
                if ver != ARTIFACT_FORMAT_VERSION {
                    return Err(ConfigError(format!(
                        "format_version {ver} unsupported (expected {ARTIFACT_FORMAT_VERSION})"
                    )));
                }
            }
            "dataset.n_samples" => self.n_samples = p(key, value)?,
            "dataset.grid" => self.grid = p(key, value)?,
            "dataset.blob_count" => self.blob_count = pair_usize(key, value)?,
            "dataset.blob_scale" => self.blob_scale = pair_f64(key, value)?,
            "dataset.confuser_count" => self.confuser_count = pair_usize(key, value)?,
            "dataset.noise_std" => self.noise_std = p(key, value)?,
            "dataset.tau_range" => self.tau_range = pair_f64(key, value)?,
            "dataset.train_fraction" => self.train_fraction = p(key, value)?,
            "model.kind" => {
                self.model_kind = match value {
                    "plain" => ModelKind::Plain,
                    "hyper" => ModelKind::Hyper,
                    other => return Err(ConfigError(format!("unknown model.kind `{other}`"))),
                }
            }
            "model.kernel_depths" => self.kernel_depths = list_usize(key, value)?,
            "model.input_channels" => self.input_channels = p(key, value)?,
            "model.kernel_size" => self.kernel_size = p(key, value)?,
            "model.hypervector_size" => self.hypervector_size = p(key, value)?,
            "model.mapping_layers" => self.mapping_layers = p(key, value)?,
            "train.strategy" => {
                self.strategy = Strategy::parse(value)
                    .ok_or_else(|| ConfigError(format!("unknown train.strategy `{value}`")))?
            }
            "train.epochs" => self.epochs = p(key, value)?,
            "train.minibatch" => self.minibatch = p(key, value)?,
            "train.lr" => {
                self.lr = if value == "default" {
                    None
                } else {
                    Some(p(key, value)?)
                }
            }
            "train.weight_decay" => self.weight_decay = p(key, value)?,
            "train.patch" => self.patch = p(key, value)?,
            "train.alpha_grid" => self.alpha_grid = list_f64(key, value)?,
            "train.ensemble_size" => self.ensemble_size = p(key, value)?,
            "train.dropout_rate" => self.dropout_rate = p(key, value)?,
            "train.fg_crop_retries" => self.fg_crop_retries = p(key, value)?,
            "train.augment" => self.augment = p(key, value)?,
            "loss.smooth" => self.smooth = p(key, value)?,
            "loss.dice_ce_mix" => self.dice_ce_mix = p(key, value)?,
            "predict.alpha_grid" => self.predict_alpha_grid = list_f64(key, value)?,
            "predict.patch" => {
                self.predict_patch = if value == "default" {
                    None
                } else {
                    Some(p(key, value)?)
                }
            }
            "predict.overlap" => self.overlap = p(key, value)?,
            "predict.taus" => self.taus = list_f64(key, value)?,
            "metrics.tau_step" => self.metrics_tau_step = p(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            n_samples: self.n_samples,
            grid: self.grid,
            blob_count: self.blob_count,
            blob_scale: self.blob_scale,
            confuser_count: self.confuser_count,
            noise_std: self.noise_std,
            tau_range: self.tau_range,
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = match self.model_kind {
            ModelKind::Plain => ModelSpec::plain(self.kernel_depths.clone(), self.input_channels),
            ModelKind::Hyper => ModelSpec::hyper(
                self.kernel_depths.clone(),
                self.input_channels,
                self.hypervector_size,
                self.mapping_layers,
            ),
        };
        spec.kernel_size = self.kernel_size;
        spec
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.strategy, self.seed);
        cfg.epochs = self.epochs;
        cfg.minibatch = self.minibatch;
        cfg.lr = self.lr;
        cfg.weight_decay = self.weight_decay;
        cfg.patch = self.patch;
        cfg.alpha_grid = self.alpha_grid.clone();
        cfg.ensemble_size = self.ensemble_size;
        cfg.dropout_rate = self.dropout_rate;
        cfg.fg_crop_retries = self.fg_crop_retries;
        cfg.augment = self.augment;
        cfg.smooth = self.smooth;
        cfg.dice_ce_mix = self.dice_ce_mix;
        cfg
    }

    pub fn metrics_taus(&self) -> Vec<f64> {
        let step = self.metrics_tau_step;
        let n = (1.0 / step).round() as usize;
        (0..=n).map(|i| (i as f64 * step).min(1.0)).collect()
    }

    fn fmt_f64(v: f64) -> String {
        format!("{v}")
    }

    fn fmt_list<T: std::fmt::Display>(values: &[T]) -> String {
        values
            .iter()
            .map(T::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }

    /// The effective configuration, canonically ordered; parsing it back
    /// yields the same configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("format_version", ARTIFACT_FORMAT_VERSION.to_string());
        kv("seed", self.seed.to_string());
        kv("dataset.n_samples", self.n_samples.to_string());
        kv("dataset.grid", self.grid.to_string());
        kv(
            "dataset.blob_count",
            format!("{},{}", self.blob_count.0, self.blob_count.1),
        );
        kv(
            "dataset.blob_scale",
            format!(
                "{},{}",
                Self::fmt_f64(self.blob_scale.0),
                Self::fmt_f64(self.blob_scale.1)
            ),
        );
        kv(
            "dataset.confuser_count",
            format!("{},{}", self.confuser_count.0, self.confuser_count.1),
        );
        kv("dataset.noise_std", Self::fmt_f64(self.noise_std));
        kv(
            "dataset.tau_range",
            format!(
                "{},{}",
                Self::fmt_f64(self.tau_range.0),
                Self::fmt_f64(self.tau_range.1)
            ),
        );
        kv("dataset.train_fraction", Self::fmt_f64(self.train_fraction));
        kv("model.kind", self.model_kind.as_str().to_string());
        kv("model.kernel_depths", Self::fmt_list(&self.kernel_depths));
        kv("model.input_channels", self.input_channels.to_string());
        kv("model.kernel_size", self.kernel_size.to_string());
        kv("model.hypervector_size", self.hypervector_size.to_string());
        kv("model.mapping_layers", self.mapping_layers.to_string());
        kv("train.strategy", self.strategy.as_str().to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.minibatch", self.minibatch.to_string());
        kv(
            "train.lr",
            self.lr.map(Self::fmt_f64).unwrap_or_else(|| "default".into()),
        );
        kv("train.weight_decay", Self::fmt_f64(self.weight_decay));
        kv("train.patch", self.patch.to_string());
        kv("train.alpha_grid", Self::fmt_list(&self.alpha_grid));
        kv("train.ensemble_size", self.ensemble_size.to_string());
        kv("train.dropout_rate", Self::fmt_f64(self.dropout_rate));
        kv("train.fg_crop_retries", self.fg_crop_retries.to_string());
        kv("train.augment", self.augment.to_string());
        kv("loss.smooth", Self::fmt_f64(self.smooth));
        kv("loss.dice_ce_mix", Self::fmt_f64(self.dice_ce_mix));
        kv(
            "predict.alpha_grid",
            Self::fmt_list(&self.predict_alpha_grid),
        );
        kv(
            "predict.patch",
            self.predict_patch
                .map(|v| v.to_string())
                .unwrap_or_else(|| "default".into()),
        );
        kv("predict.overlap", Self::fmt_f64(self.overlap));
        kv("predict.taus", Self::fmt_list(&self.taus));
        kv("metrics.tau_step", Self::fmt_f64(self.metrics_tau_step));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let err = RunConfig::load(None, &[]).unwrap_err();
        assert!(err.0.contains("seed"));
        assert!(RunConfig::load(None, &["seed=3".into()]).is_ok());
    }

    #[test]
    fn unknown_keys_are_listed() {
        let err = RunConfig::load(
            None,
            &["seed=1".into(), "dataset.bogus=2".into(), "nope=3".into()],
        )
        .unwrap_err();
        assert!(err.0.contains("dataset.bogus"));
        assert!(err.0.contains("nope"));
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = std::env::temp_dir().join(format!("segprob_cfg_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        fs::write(&path, "seed = 1\ndataset.grid = 32\n# comment\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["dataset.grid=64".into()]).unwrap();
        assert_eq!(cfg.grid, 64);
        assert_eq!(cfg.seed, 1);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = RunConfig::load(
            None,
            &[
                "seed=9".into(),
                "train.strategy=vtv_ensemble".into(),
                "train.lr=0.001".into(),
                "model.kind=hyper".into(),
                "predict.taus=0.25,0.5".into(),
            ],
        )
        .unwrap();
        let echo = cfg.echo();
        let dir = std::env::temp_dir().join(format!("segprob_cfg_echo_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("echo.cfg");
        fs::write(&path, &echo).unwrap();
        let back = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(back.echo(), echo);
        assert_eq!(back.strategy, Strategy::VtvEnsemble);
        assert_eq!(back.lr, Some(0.001));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn negative_counts_are_rejected() {
        let err = RunConfig::load(None, &["seed=1".into(), "dataset.n_samples=-5".into()])
            .unwrap_err();
        assert!(err.0.contains("dataset.n_samples"));
    }

    #[test]
    fn metrics_tau_grid_has_21_points_at_default_step() {
        let cfg = RunConfig::load(None, &["seed=1".into()]).unwrap();
        let taus = cfg.metrics_taus();
        assert_eq!(taus.len(), 21);
        assert_eq!(taus[0], 0.0);
        assert!((taus[20] - 1.0).abs() < 1e-12);
    }
}
