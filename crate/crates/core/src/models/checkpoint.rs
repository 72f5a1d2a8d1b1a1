//! On-disk checkpoint format.
//!
//! A checkpoint is a directory holding a text `manifest` (spec fields,
//! training metadata, and a tensor table of name/shape/offset/count rows)
//! plus `weights.bin`, the little-endian f64 blob the table indexes.
//! Optimizer state, when present, adds `optim.bin` with its own table.
//! Serialization order is deterministic, so identical states produce
//! byte-identical directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::resunet::{expected_trainables, stat_names};
use super::{HyperModel, ModelError, ModelKind, ModelSpec, PlainModel, SPATIAL_RANK};
use crate::tensor::{AdamSnapshot, NamedTensors, RunningStats, Tensor, TensorRecord};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Training provenance stored in the manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epoch: usize,
    pub loss_curve: Vec<f64>,
}

/// A model's architecture plus every named tensor (trainable parameters and
/// batch-norm running statistics), with optional optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub tensors: NamedTensors,
    pub optimizer: Option<AdamSnapshot>,
    pub meta: TrainMeta,
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> ModelError {
    ModelError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn merge_stats(params: &NamedTensors, stats: &BTreeMap<String, RunningStats>) -> NamedTensors {
    let mut all = params.clone();
    for (name, st) in stats {
        all.insert(
            format!("{name}.bn.running_mean"),
            Tensor::new(vec![st.mean.len()], st.mean.clone()).expect("stat shape"),
        );
        all.insert(
            format!("{name}.bn.running_var"),
            Tensor::new(vec![st.var.len()], st.var.clone()).expect("stat shape"),
        );
    }
    all
}

/// Split a full tensor table into trainables and running statistics,
/// validating both against the spec-derived inventory.
fn split_and_validate(
    spec: &ModelSpec,
    tensors: &NamedTensors,
) -> Result<(NamedTensors, BTreeMap<String, RunningStats>), ModelError> {
    let expected = expected_trainables(spec);
    let mut params = NamedTensors::new();
    let mut stats: BTreeMap<String, RunningStats> = BTreeMap::new();
    let stat_channels: BTreeMap<String, usize> = stat_names(spec).into_iter().collect();

    for (name, tensor) in tensors.iter() {
        if let Some(site) = name.strip_suffix(".bn.running_mean") {
            let channels = *stat_channels.get(site).ok_or_else(|| {
                ModelError::InventoryMismatch(format!("unexpected running stat `{name}`"))
            })?;
            if tensor.shape() != [channels] {
                return Err(ModelError::InventoryMismatch(format!(
                    "`{name}` has shape {:?}, expected [{channels}]",
                    tensor.shape()
                )));
            }
            stats
                .entry(site.to_string())
                .or_insert_with(|| RunningStats::identity(channels))
                .mean = tensor.data().to_vec();
        } else if let Some(site) = name.strip_suffix(".bn.running_var") {
            let channels = *stat_channels.get(site).ok_or_else(|| {
                ModelError::InventoryMismatch(format!("unexpected running stat `{name}`"))
            })?;
            if tensor.shape() != [channels] {
                return Err(ModelError::InventoryMismatch(format!(
                    "`{name}` has shape {:?}, expected [{channels}]",
                    tensor.shape()
                )));
            }
            stats
                .entry(site.to_string())
                .or_insert_with(|| RunningStats::identity(channels))
                .var = tensor.data().to_vec();
        } else {
            match expected.get(name) {
                Some(shape) if shape == tensor.shape() => {
                    params.insert(name.to_string(), tensor.clone());
                }
                Some(shape) => {
                    return Err(ModelError::InventoryMismatch(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        tensor.shape()
                    )));
                }
                None => {
                    return Err(ModelError::InventoryMismatch(format!(
                        "unexpected tensor `{name}`"
                    )));
                }
            }
        }
    }
    for name in expected.keys() {
        if params.get(name).is_none() {
            return Err(ModelError::InventoryMismatch(format!(
                "missing tensor `{name}`"
            )));
        }
    }
    for (site, channels) in &stat_channels {
        match stats.get(site) {
            Some(st) if st.mean.len() == *channels && st.var.len() == *channels => {}
            _ => {
                return Err(ModelError::InventoryMismatch(format!(
                    "missing running statistics for `{site}`"
                )));
            }
        }
    }
    Ok((params, stats))
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_shape(s: &str, path: &Path) -> Result<Vec<usize>, ModelError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| format_err(path, format!("bad shape `{s}`")))
        })
        .collect()
}

fn records_to_lines(prefix: &str, records: &[TensorRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{prefix} {} {} {} {}\n",
            r.name,
            shape_str(&r.shape),
            r.offset,
            r.count
        ));
    }
    out
}

fn snapshot_to_tensors(snap: &AdamSnapshot) -> NamedTensors {
    let mut t = NamedTensors::new();
    for (name, m) in &snap.m {
        t.insert(
            format!("m.{name}"),
            Tensor::new(vec![m.len()], m.clone()).expect("moment shape"),
        );
    }
    for (name, v) in &snap.v {
        t.insert(
            format!("v.{name}"),
            Tensor::new(vec![v.len()], v.clone()).expect("moment shape"),
        );
    }
    t
}

fn tensors_to_snapshot(step_count: u64, t: &NamedTensors) -> Result<AdamSnapshot, ModelError> {
    let mut snap = AdamSnapshot {
        step_count,
        m: BTreeMap::new(),
        v: BTreeMap::new(),
    };
    for (name, tensor) in t.iter() {
        if let Some(p) = name.strip_prefix("m.") {
            snap.m.insert(p.to_string(), tensor.data().to_vec());
        } else if let Some(p) = name.strip_prefix("v.") {
            snap.v.insert(p.to_string(), tensor.data().to_vec());
        } else {
            return Err(ModelError::InventoryMismatch(format!(
                "unexpected optimizer tensor `{name}`"
            )));
        }
    }
    Ok(snap)
}

impl Checkpoint {
    pub fn from_plain(model: &PlainModel, meta: TrainMeta, optimizer: Option<AdamSnapshot>) -> Self {
        Checkpoint {
            spec: model.spec().clone(),
            tensors: merge_stats(model.params(), model.stats()),
            optimizer,
            meta,
        }
    }

    pub fn from_hyper(model: &HyperModel, meta: TrainMeta, optimizer: Option<AdamSnapshot>) -> Self {
        Checkpoint {
            spec: model.spec().clone(),
            tensors: merge_stats(model.params(), model.stats()),
            optimizer,
            meta,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        self.spec.validate()?;
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let (records, blob) = self.tensors.to_blob();

        let mut manifest = String::new();
        manifest.push_str(&format!("format_version {CHECKPOINT_FORMAT_VERSION}\n"));
        manifest.push_str(&format!("kind {}\n", self.spec.kind.as_str()));
        manifest.push_str(&format!("spatial_rank {SPATIAL_RANK}\n"));
        manifest.push_str(&format!("input_channels {}\n", self.spec.input_channels));
        manifest.push_str(&format!("kernel_size {}\n", self.spec.kernel_size));
        manifest.push_str(&format!(
            "kernel_depths {}\n",
            shape_str(&self.spec.kernel_depths)
        ));
        if let Some(z) = self.spec.hypervector_size {
            manifest.push_str(&format!("hypervector_size {z}\n"));
        }
        if let Some(m) = self.spec.mapping_layers {
            manifest.push_str(&format!("mapping_layers {m}\n"));
        }
        manifest.push_str(&format!("seed {}\n", self.meta.seed));
        manifest.push_str(&format!("epoch {}\n", self.meta.epoch));
        if !self.meta.loss_curve.is_empty() {
            let curve: Vec<String> = self
                .meta
                .loss_curve
                .iter()
                .map(|v| format!("{v:e}"))
                .collect();
            manifest.push_str(&format!("loss_curve {}\n", curve.join(",")));
        }
        manifest.push_str(&records_to_lines("tensor", &records));

        if let Some(snap) = &self.optimizer {
            let opt_tensors = snapshot_to_tensors(snap);
            let (opt_records, opt_blob) = opt_tensors.to_blob();
            manifest.push_str(&format!("opt_step {}\n", snap.step_count));
            manifest.push_str(&records_to_lines("opt_tensor", &opt_records));
            fs::write(dir.join("optim.bin"), opt_blob)
                .map_err(|e| io_err(&dir.join("optim.bin"), e))?;
        }

        fs::write(dir.join("manifest"), manifest)
            .map_err(|e| io_err(&dir.join("manifest"), e))?;
        fs::write(dir.join("weights.bin"), blob)
            .map_err(|e| io_err(&dir.join("weights.bin"), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let manifest_path = dir.join("manifest");
        let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;

        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut records: Vec<TensorRecord> = Vec::new();
        let mut opt_records: Vec<TensorRecord> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once(' ')
                .ok_or_else(|| format_err(&manifest_path, format!("bad line `{line}`")))?;
            if key == "tensor" || key == "opt_tensor" {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(format_err(&manifest_path, format!("bad row `{line}`")));
                }
                let record = TensorRecord {
                    name: parts[0].to_string(),
                    shape: parse_shape(parts[1], &manifest_path)?,
                    offset: parts[2]
                        .parse()
                        .map_err(|_| format_err(&manifest_path, format!("bad offset `{line}`")))?,
                    count: parts[3]
                        .parse()
                        .map_err(|_| format_err(&manifest_path, format!("bad count `{line}`")))?,
                };
                if key == "tensor" {
                    records.push(record);
                } else {
                    opt_records.push(record);
                }
            } else {
                fields.insert(key, rest);
            }
        }

        let get = |key: &str| -> Result<&str, ModelError> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| format_err(&manifest_path, format!("missing field `{key}`")))
        };
        let version: u32 = get("format_version")?
            .parse()
            .map_err(|_| format_err(&manifest_path, "bad format_version"))?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(format_err(
                &manifest_path,
                format!("format_version {version} unsupported (expected {CHECKPOINT_FORMAT_VERSION})"),
            ));
        }
        let rank: usize = get("spatial_rank")?
            .parse()
            .map_err(|_| format_err(&manifest_path, "bad spatial_rank"))?;
        if rank != SPATIAL_RANK {
            return Err(format_err(
                &manifest_path,
                format!("spatial_rank {rank} unsupported (expected {SPATIAL_RANK})"),
            ));
        }
        let kind = match get("kind")? {
            "plain" => ModelKind::Plain,
            "hyper" => ModelKind::Hyper,
            other => return Err(format_err(&manifest_path, format!("unknown kind `{other}`"))),
        };
        let parse_usize = |key: &str| -> Result<usize, ModelError> {
            get(key)?
                .parse()
                .map_err(|_| format_err(&manifest_path, format!("bad `{key}`")))
        };
        let spec = ModelSpec {
            kind,
            kernel_depths: parse_shape(get("kernel_depths")?, &manifest_path)?,
            input_channels: parse_usize("input_channels")?,
            kernel_size: parse_usize("kernel_size")?,
            hypervector_size: match fields.get("hypervector_size") {
                Some(v) => Some(v.parse().map_err(|_| {
                    format_err(&manifest_path, "bad `hypervector_size`")
                })?),
                None => None,
            },
            mapping_layers: match fields.get("mapping_layers") {
                Some(v) => Some(
                    v.parse()
                        .map_err(|_| format_err(&manifest_path, "bad `mapping_layers`"))?,
                ),
                None => None,
            },
        };
        spec.validate()?;

        let meta = TrainMeta {
            seed: get("seed")?
                .parse()
                .map_err(|_| format_err(&manifest_path, "bad `seed`"))?,
            epoch: parse_usize("epoch")?,
            loss_curve: match fields.get("loss_curve") {
                Some(v) => v
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<f64>()
                            .map_err(|_| format_err(&manifest_path, "bad `loss_curve`"))
                    })
                    .collect::<Result<Vec<f64>, ModelError>>()?,
                None => Vec::new(),
            },
        };

        let weights_path = dir.join("weights.bin");
        let blob = fs::read(&weights_path).map_err(|e| io_err(&weights_path, e))?;
        let tensors = NamedTensors::from_blob(&records, &blob)?;

        let optimizer = if let Some(step_str) = fields.get("opt_step") {
            let step_count: u64 = step_str
                .parse()
                .map_err(|_| format_err(&manifest_path, "bad `opt_step`"))?;
            let opt_path = dir.join("optim.bin");
            let opt_blob = fs::read(&opt_path).map_err(|e| io_err(&opt_path, e))?;
            let opt_tensors = NamedTensors::from_blob(&opt_records, &opt_blob)?;
            Some(tensors_to_snapshot(step_count, &opt_tensors)?)
        } else {
            None
        };

        Ok(Checkpoint {
            spec,
            tensors,
            optimizer,
            meta,
        })
    }
}

impl PlainModel {
    /// Reconstruct from a checkpoint, rejecting hyper checkpoints and any
    /// tensor-table drift from the spec-derived inventory.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        if ck.spec.kind != ModelKind::Plain {
            return Err(ModelError::KindMismatch {
                stored: ck.spec.kind.as_str(),
                requested: "plain",
            });
        }
        let (params, stats) = split_and_validate(&ck.spec, &ck.tensors)?;
        Ok(PlainModel::from_parts(ck.spec.clone(), params, stats))
    }
}

impl HyperModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        if ck.spec.kind != ModelKind::Hyper {
            return Err(ModelError::KindMismatch {
                stored: ck.spec.kind.as_str(),
                requested: "hyper",
            });
        }
        let (params, stats) = split_and_validate(&ck.spec, &ck.tensors)?;
        Ok(HyperModel::from_parts(ck.spec.clone(), params, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("segprob_ckpt_{tag}_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn plain_roundtrip_is_bit_exact() {
        let model = PlainModel::init(ModelSpec::plain(vec![4, 8], 1), 77).unwrap();
        let meta = TrainMeta {
            seed: 77,
            epoch: 3,
            loss_curve: vec![0.9, 0.5, 0.31],
        };
        let ck = Checkpoint::from_plain(&model, meta.clone(), None);
        let dir = tempdir("plain");
        ck.save(&dir).unwrap();
        let back = Checkpoint::load(&dir).unwrap();
        assert_eq!(back.spec, *model.spec());
        assert_eq!(back.meta, meta);
        assert_eq!(back.tensors, ck.tensors);
        let model2 = PlainModel::from_checkpoint(&back).unwrap();
        assert_eq!(model2.params(), model.params());

        // Saving the reloaded checkpoint reproduces identical bytes.
        let dir2 = tempdir("plain2");
        back.save(&dir2).unwrap();
        for file in ["manifest", "weights.bin"] {
            assert_eq!(
                fs::read(dir.join(file)).unwrap(),
                fs::read(dir2.join(file)).unwrap(),
                "{file} differs"
            );
        }
        fs::remove_dir_all(&dir).ok();
        fs::remove_dir_all(&dir2).ok();
    }

    #[test]
    fn hyper_roundtrip_with_optimizer() {
        let model = HyperModel::init(ModelSpec::hyper(vec![4, 8], 1, 8, 2), 5).unwrap();
        let mut snap = AdamSnapshot {
            step_count: 42,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        };
        for (name, t) in model.params().iter().take(3) {
            snap.m.insert(name.to_string(), vec![0.25; t.numel()]);
            snap.v.insert(name.to_string(), vec![0.5; t.numel()]);
        }
        let ck = Checkpoint::from_hyper(&model, TrainMeta::default(), Some(snap.clone()));
        let dir = tempdir("hyper");
        ck.save(&dir).unwrap();
        let back = Checkpoint::load(&dir).unwrap();
        assert_eq!(back.optimizer.as_ref(), Some(&snap));
        let model2 = HyperModel::from_checkpoint(&back).unwrap();
        assert_eq!(model2.params(), model.params());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn plain_checkpoint_rejected_as_hyper() {
        let model = PlainModel::init(ModelSpec::plain(vec![4], 1), 1).unwrap();
        let ck = Checkpoint::from_plain(&model, TrainMeta::default(), None);
        let err = HyperModel::from_checkpoint(&ck).unwrap_err();
        assert!(matches!(err, ModelError::KindMismatch { .. }));
    }

    #[test]
    fn truncated_blob_fails_with_offset_diagnostic() {
        let model = PlainModel::init(ModelSpec::plain(vec![4], 1), 2).unwrap();
        let ck = Checkpoint::from_plain(&model, TrainMeta::default(), None);
        let dir = tempdir("trunc");
        ck.save(&dir).unwrap();
        let blob = fs::read(dir.join("weights.bin")).unwrap();
        fs::write(dir.join("weights.bin"), &blob[..blob.len() - 16]).unwrap();
        let err = Checkpoint::load(&dir).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ends before"), "got `{msg}`");
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn foreign_tensor_rejected_with_name() {
        let model = PlainModel::init(ModelSpec::plain(vec![4], 1), 3).unwrap();
        let mut ck = Checkpoint::from_plain(&model, TrainMeta::default(), None);
        ck.tensors
            .insert("intruder.w".into(), Tensor::zeros(vec![2]));
        let err = PlainModel::from_checkpoint(&ck).unwrap_err();
        assert!(err.to_string().contains("intruder.w"));
    }

    #[test]
    fn missing_tensor_rejected_with_name() {
        let model = PlainModel::init(ModelSpec::plain(vec![4], 1), 3).unwrap();
        let ck = Checkpoint::from_plain(&model, TrainMeta::default(), None);
        let dir = tempdir("missing");
        ck.save(&dir).unwrap();
        // Drop one tensor row from the manifest.
        let manifest = fs::read_to_string(dir.join("manifest")).unwrap();
        let filtered: Vec<&str> = manifest
            .lines()
            .filter(|l| !l.starts_with("tensor head.conv.w"))
            .collect();
        fs::write(dir.join("manifest"), filtered.join("\n")).unwrap();
        let ck2 = Checkpoint::load(&dir).unwrap();
        let err = PlainModel::from_checkpoint(&ck2).unwrap_err();
        assert!(err.to_string().contains("head.conv.w"), "{err}");
        fs::remove_dir_all(&dir).ok();
    }
}
