//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use segprob_core::grid::{Grid, ProbabilityMap};
use segprob_core::infer::{
    average_probability_maps, entropy_map, export_map, sliding_window_predict, threshold_map,
    HyperAt, ENTROPY_EPSILON,
};
use segprob_core::losses::TverskyParams;
use segprob_core::metrics::{aggregate, report_json, summary_csv, sweep_csv, EvalSample};
use segprob_core::models::{Checkpoint, HyperModel, ModelKind, PlainModel};
use segprob_core::synthdata::{
    dataset_sample_names, generate_dataset, load_sample, save_dataset, split_indices,
};
use segprob_core::trainer::{
    train_hypernet, train_single, train_subset_ensemble, train_vtv_ensemble, Strategy,
    TrainedMember, TrainLog,
};

use crate::config::RunConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn validation(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn load_config(path: &Option<PathBuf>, overrides: &[String]) -> Result<RunConfig> {
    RunConfig::load(path.as_deref(), overrides).map_err(validation)
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| validation(format!("cannot create {}: {e}", dir.display())))?;
    fs::write(dir.join("config.txt"), cfg.echo())
        .map_err(|e| runtime(format!("cannot write config echo: {e}")))?;
    Ok(())
}

pub fn generate(config: &Option<PathBuf>, out: &Path, overrides: &[String]) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let data_cfg = cfg.dataset_config();
    data_cfg.validate().map_err(validation)?;
    prepare_out(out, &cfg)?;
    let samples = generate_dataset(&data_cfg).map_err(runtime)?;
    save_dataset(out, &data_cfg, &samples).map_err(runtime)?;
    println!("generated {} samples in {}", samples.len(), out.display());
    Ok(())
}

fn load_training_split(
    dataset: &Path,
) -> Result<Vec<segprob_core::synthdata::SyntheticSample>> {
    let names = dataset_sample_names(dataset).map_err(validation)?;
    if names.is_empty() {
        return Err(validation(format!(
            "dataset {} lists no samples",
            dataset.display()
        )));
    }
    // The split is a property of the dataset: derived from the dataset seed
    // recorded at generation time, not the training seed.
    let manifest = fs::read_to_string(dataset.join("dataset.manifest"))
        .map_err(|e| validation(format!("cannot read dataset manifest: {e}")))?;
    let mut dataset_seed = None;
    let mut train_fraction = None;
    for line in manifest.lines() {
        if let Some(v) = line.strip_prefix("seed ") {
            dataset_seed = v.trim().parse::<u64>().ok();
        }
        if let Some(v) = line.strip_prefix("train_fraction ") {
            train_fraction = v.trim().parse::<f64>().ok();
        }
    }
    let dataset_seed =
        dataset_seed.ok_or_else(|| validation("dataset manifest lacks a seed"))?;
    let train_fraction =
        train_fraction.ok_or_else(|| validation("dataset manifest lacks train_fraction"))?;
    let (train_idx, _) = split_indices(names.len(), train_fraction, dataset_seed);
    let mut samples = Vec::with_capacity(train_idx.len());
    for i in train_idx {
        samples.push(load_sample(dataset, &names[i]).map_err(validation)?);
    }
    Ok(samples)
}

fn write_members(out: &Path, members: &[TrainedMember], log: &TrainLog) -> Result<()> {
    for member in members {
        let dir = out.join(&member.label);
        member
            .checkpoint
            .save(&dir)
            .map_err(|e| runtime(format!("saving checkpoint {}: {e}", dir.display())))?;
    }
    // Wall time is a log concern; artifacts stay byte-deterministic.
    let mut log_text = log.to_text();
    let mut total_ms: u128 = 0;
    for member in members {
        writeln!(
            log_text,
            "# wall_time_ms member={} {}",
            member.label, member.report.wall_time_ms
        )
        .expect("string write");
        total_ms += member.report.wall_time_ms;
    }
    writeln!(log_text, "# wall_time_ms total {total_ms}").expect("string write");
    fs::write(out.join("train.log"), log_text)
        .map_err(|e| runtime(format!("writing train.log: {e}")))?;

    let mut report = String::from("{\n  \"members\": [\n");
    for (i, member) in members.iter().enumerate() {
        let losses: Vec<String> = member
            .report
            .epoch_losses
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        write!(
            report,
            "    {{\"label\": \"{}\", \"seed\": {}, \"steps\": {}, \"epoch_losses\": [{}]}}{}\n",
            member.label,
            member.report.seed,
            member.report.steps,
            losses.join(", "),
            if i + 1 < members.len() { "," } else { "" }
        )
        .expect("string write");
    }
    report.push_str("  ]\n}\n");
    fs::write(out.join("report.json"), report)
        .map_err(|e| runtime(format!("writing report.json: {e}")))?;
    Ok(())
}

pub fn train(
    config: &Option<PathBuf>,
    dataset: &Path,
    out: &Path,
    overrides: &[String],
) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let train_cfg = cfg.train_config();
    train_cfg.validate().map_err(validation)?;
    let spec = cfg.model_spec();
    spec.validate().map_err(validation)?;
    let samples = load_training_split(dataset)?;
    prepare_out(out, &cfg)?;

    let mut log = TrainLog::new();
    let members = match cfg.strategy {
        Strategy::SingleDice | Strategy::SingleDiceCe | Strategy::Dropout => {
            vec![train_single(&samples, &spec, &train_cfg, &mut log).map_err(runtime)?]
        }
        Strategy::VtvEnsemble => {
            train_vtv_ensemble(&samples, &spec, &train_cfg, &mut log).map_err(runtime)?
        }
        Strategy::SubsetEnsemble => {
            train_subset_ensemble(&samples, &spec, &train_cfg, &mut log).map_err(runtime)?
        }
        Strategy::Hypernet => {
            vec![train_hypernet(&samples, &spec, &train_cfg, &mut log).map_err(runtime)?]
        }
    };
    write_members(out, &members, &log)?;
    println!(
        "trained {} ({} member{}) into {}",
        cfg.strategy.as_str(),
        members.len(),
        if members.len() == 1 { "" } else { "s" },
        out.display()
    );
    Ok(())
}

enum LoadedModels {
    Plain(Vec<PlainModel>),
    Hyper(HyperModel),
}

/// Accept either explicit checkpoint directories or one training output
/// directory holding member_*/fold_*/model subdirectories.
fn resolve_checkpoint_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for path in paths {
        if path.join("manifest").is_file() {
            dirs.push(path.clone());
            continue;
        }
        if !path.is_dir() {
            return Err(validation(format!(
                "checkpoint path {} does not exist",
                path.display()
            )));
        }
        let mut subdirs: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest").is_file())
            .collect();
        subdirs.sort();
        if subdirs.is_empty() {
            return Err(validation(format!(
                "{} holds no checkpoints (no manifest found)",
                path.display()
            )));
        }
        dirs.extend(subdirs);
    }
    Ok(dirs)
}

fn load_models(paths: &[PathBuf]) -> Result<LoadedModels> {
    let dirs = resolve_checkpoint_dirs(paths)?;
    let checkpoints: Vec<Checkpoint> = dirs
        .iter()
        .map(|d| Checkpoint::load(d).map_err(validation))
        .collect::<Result<_>>()?;
    let kinds: Vec<ModelKind> = checkpoints.iter().map(|c| c.spec.kind).collect();
    if kinds.iter().all(|&k| k == ModelKind::Plain) {
        let models = checkpoints
            .iter()
            .map(|c| PlainModel::from_checkpoint(c).map_err(validation))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedModels::Plain(models))
    } else if kinds == [ModelKind::Hyper] {
        Ok(LoadedModels::Hyper(
            HyperModel::from_checkpoint(&checkpoints[0]).map_err(validation)?,
        ))
    } else {
        Err(validation(
            "predict wants either plain checkpoints or exactly one hyper checkpoint",
        ))
    }
}

fn format_tau(tau: f64) -> String {
    format!("{tau}")
}

pub fn predict(
    config: &Option<PathBuf>,
    dataset: &Path,
    checkpoints: &[PathBuf],
    out: &Path,
    overrides: &[String],
) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    for &tau in &cfg.taus {
        if !(0.0..=1.0).contains(&tau) {
            return Err(validation(format!("predict.taus entry {tau} outside [0, 1]")));
        }
    }
    let models = load_models(checkpoints)?;
    let names = dataset_sample_names(dataset).map_err(validation)?;
    prepare_out(out, &cfg)?;

    let patch = cfg.predict_patch.unwrap_or(cfg.patch);
    for name in &names {
        let sample = load_sample(dataset, name).map_err(validation)?;
        let prob = match &models {
            LoadedModels::Plain(members) => {
                let maps: Vec<ProbabilityMap> = members
                    .iter()
                    .map(|m| {
                        sliding_window_predict(&sample.image, m, patch, cfg.overlap)
                            .map_err(runtime)
                    })
                    .collect::<Result<_>>()?;
                average_probability_maps(&maps).map_err(runtime)?
            }
            LoadedModels::Hyper(model) => {
                if cfg.predict_alpha_grid.is_empty() {
                    return Err(validation("predict.alpha_grid is empty"));
                }
                let maps: Vec<ProbabilityMap> = cfg
                    .predict_alpha_grid
                    .iter()
                    .map(|&alpha| {
                        let h = TverskyParams::new(alpha).map_err(validation)?;
                        let at = HyperAt { model, h };
                        sliding_window_predict(&sample.image, &at, patch, cfg.overlap)
                            .map_err(runtime)
                    })
                    .collect::<Result<_>>()?;
                average_probability_maps(&maps).map_err(runtime)?
            }
        };
        let sdir = out.join(name);
        fs::create_dir_all(&sdir)
            .map_err(|e| runtime(format!("cannot create {}: {e}", sdir.display())))?;
        export_map(&sdir, "prob", prob.grid()).map_err(runtime)?;
        let entropy = entropy_map(&prob, ENTROPY_EPSILON);
        export_map(&sdir, "entropy", &entropy).map_err(runtime)?;
        for &tau in &cfg.taus {
            let label = threshold_map(&prob, tau).map_err(runtime)?;
            let stem = format!("label_tau{}", format_tau(tau));
            label
                .write_u8(&sdir.join(format!("{stem}.u8")))
                .map_err(runtime)?;
            segprob_core::grid::write_header(
                &sdir.join(format!("{stem}.header")),
                label.rows(),
                label.cols(),
                "u8",
            )
            .map_err(runtime)?;
            segprob_core::grid::write_pgm(&sdir.join(format!("{stem}.pgm")), &label.to_grid())
                .map_err(runtime)?;
        }
    }
    println!("predicted {} samples into {}", names.len(), out.display());
    Ok(())
}

pub fn evaluate(
    config: &Option<PathBuf>,
    dataset: &Path,
    predictions: &Path,
    method: &str,
    out: &Path,
    overrides: &[String],
) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let names = dataset_sample_names(dataset).map_err(validation)?;

    // IDs must align exactly; report orphans on both sides.
    let mut predicted: Vec<String> = fs::read_dir(predictions)
        .map_err(|e| validation(format!("cannot read {}: {e}", predictions.display())))?
        .filter_map(|entry| entry.ok())
        .filter(|e| e.path().join("prob.f64").is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    predicted.sort();
    let dataset_set: std::collections::BTreeSet<&str> =
        names.iter().map(String::as_str).collect();
    let predicted_set: std::collections::BTreeSet<&str> =
        predicted.iter().map(String::as_str).collect();
    let missing: Vec<&str> = dataset_set.difference(&predicted_set).copied().collect();
    let orphaned: Vec<&str> = predicted_set.difference(&dataset_set).copied().collect();
    if !missing.is_empty() || !orphaned.is_empty() {
        return Err(validation(format!(
            "prediction/dataset IDs do not align; missing predictions: [{}]; orphan predictions: [{}]",
            missing.join(", "),
            orphaned.join(", ")
        )));
    }

    let mut samples = Vec::with_capacity(names.len());
    for name in &names {
        let sample = load_sample(dataset, name).map_err(validation)?;
        let sdir = predictions.join(name);
        let (rows, cols, dtype) =
            segprob_core::grid::read_header(&sdir.join("prob.header")).map_err(validation)?;
        if dtype != "f64" {
            return Err(validation(format!(
                "{}: prob map dtype {dtype}, expected f64",
                sdir.display()
            )));
        }
        let grid = Grid::read_f64(&sdir.join("prob.f64"), rows, cols).map_err(validation)?;
        let prob = ProbabilityMap::new(grid).map_err(validation)?;
        samples.push(EvalSample {
            prob,
            truth: sample.annotation.clone(),
            p_true: Some(sample.p_true.clone()),
        });
    }

    let taus = cfg.metrics_taus();
    let report = aggregate(&samples, &taus).map_err(runtime)?;
    prepare_out(out, &cfg)?;
    let rows = vec![(method.to_string(), report)];
    fs::write(out.join("summary.csv"), summary_csv(&rows))
        .map_err(|e| runtime(format!("writing summary.csv: {e}")))?;
    fs::write(out.join("sweep.csv"), sweep_csv(&rows))
        .map_err(|e| runtime(format!("writing sweep.csv: {e}")))?;
    fs::write(out.join("report.json"), report_json(&rows))
        .map_err(|e| runtime(format!("writing report.json: {e}")))?;
    println!(
        "evaluated {} samples; reports in {}",
        samples.len(),
        out.display()
    );
    Ok(())
}
