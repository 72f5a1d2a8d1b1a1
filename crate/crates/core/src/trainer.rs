//! Training loops for every compared strategy: single networks (soft Dice
//! or Dice-cross-entropy), channel dropout, k-fold data-subset ensembles,
//! the varying-Tversky ensemble, and the hypernetwork with one freshly
//! sampled hyperparameter per minibatch.
//!
//! All strategies share one augmentation pipeline (gamma, joint flip,
//! foreground-biased crop) and one optimizer setup, so comparisons isolate
//! the loss/ensemble axis. Training is deterministic per member seed;
//! ensemble members are independent and may be trained concurrently by the
//! caller without changing any result.

use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::grid::GridError;
use crate::losses::{
    dice_ce_loss, sample_tversky_params, soft_dice_loss, tversky_loss, LossConfig, LossError,
    TverskyParams,
};
use crate::models::{
    Checkpoint, HyperModel, ModelError, ModelKind, ModelSpec, PlainModel, TrainMeta,
};
use crate::rng::Rng;
use crate::synthdata::{kfold_indices, random_crop_biased, random_flip, random_gamma, DataError, SyntheticSample};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error(
        "non-finite loss at epoch {epoch} step {step} (member seed {seed}, alpha {alpha}); aborting"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        seed: u64,
        alpha: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    SingleDice,
    SingleDiceCe,
    Dropout,
    SubsetEnsemble,
    VtvEnsemble,
    Hypernet,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SingleDice => "single_dice",
            Strategy::SingleDiceCe => "single_dice_ce",
            Strategy::Dropout => "dropout",
            Strategy::SubsetEnsemble => "subset_ensemble",
            Strategy::VtvEnsemble => "vtv_ensemble",
            Strategy::Hypernet => "hypernet",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Some(match s {
            "single_dice" => Strategy::SingleDice,
            "single_dice_ce" => Strategy::SingleDiceCe,
            "dropout" => Strategy::Dropout,
            "subset_ensemble" => Strategy::SubsetEnsemble,
            "vtv_ensemble" => Strategy::VtvEnsemble,
            "hypernet" => Strategy::Hypernet,
            _ => return None,
        })
    }
}

/// Default learning rate for plain-network strategies.
pub const DEFAULT_LR_PLAIN: f64 = 1e-4;
/// Default learning rate for the hypernetwork (an order of magnitude lower,
/// for stability).
pub const DEFAULT_LR_HYPER: f64 = 1e-5;
/// Default decoupled weight decay.
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub minibatch: usize,
    /// None picks the strategy default.
    pub lr: Option<f64>,
    pub weight_decay: f64,
    pub patch: usize,
    pub seed: u64,
    /// Fixed hyperparameters of the varying-Tversky ensemble members.
    pub alpha_grid: Vec<f64>,
    /// Member count for the subset ensemble (= fold count).
    pub ensemble_size: usize,
    pub dropout_rate: f64,
    /// Extra crop retries hunting for foreground; 0 disables the bias.
    pub fg_crop_retries: usize,
    /// Apply the gamma/flip augmentations. On for real training; the
    /// overfit sanity oracle turns it off.
    pub augment: bool,
    pub smooth: f64,
    pub dice_ce_mix: f64,
}

impl TrainConfig {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        TrainConfig {
            strategy,
            epochs: 60,
            minibatch: 8,
            lr: None,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            patch: 64,
            seed,
            alpha_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            ensemble_size: 5,
            dropout_rate: 0.1,
            fg_crop_retries: 4,
            augment: true,
            smooth: 1.0,
            dice_ce_mix: 0.5,
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.lr.unwrap_or(match self.strategy {
            Strategy::Hypernet => DEFAULT_LR_HYPER,
            _ => DEFAULT_LR_PLAIN,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.minibatch == 0 {
            return Err(TrainError::InvalidConfig("minibatch must be >= 1".into()));
        }
        if self.patch == 0 {
            return Err(TrainError::InvalidConfig("patch must be >= 1".into()));
        }
        if self.alpha_grid.is_empty() {
            return Err(TrainError::InvalidConfig("alpha_grid is empty".into()));
        }
        if self
            .alpha_grid
            .iter()
            .any(|&a| !(0.0..=1.0).contains(&a) || a == 0.0 || a == 1.0)
        {
            return Err(TrainError::InvalidConfig(
                "alpha_grid values must lie strictly inside (0, 1)".into(),
            ));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TrainError::InvalidConfig(
                "alpha_grid must be strictly increasing".into(),
            ));
        }
        if self.ensemble_size == 0 {
            return Err(TrainError::InvalidConfig("ensemble_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(TrainError::InvalidConfig(
                "dropout_rate must lie in [0, 1)".into(),
            ));
        }
        if !(self.smooth > 0.0) {
            return Err(TrainError::InvalidConfig("smooth must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dice_ce_mix) {
            return Err(TrainError::InvalidConfig(
                "dice_ce_mix must lie in [0, 1]".into(),
            ));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0) {
                return Err(TrainError::InvalidConfig("lr must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Line-oriented training log: `epoch=E step=S alpha=A loss=L elapsed_ms=T`.
#[derive(Debug, Default)]
pub struct TrainLog {
    lines: Vec<String>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn step(&mut self, epoch: usize, step: usize, alpha: Option<f64>, loss: f64, elapsed_ms: u128) {
        let mut line = String::new();
        write!(line, "epoch={epoch} step={step}").expect("string write");
        match alpha {
            Some(a) => write!(line, " alpha={a}").expect("string write"),
            None => write!(line, " alpha=-").expect("string write"),
        }
        write!(line, " loss={loss:.6} elapsed_ms={elapsed_ms}").expect("string write");
        self.lines.push(line);
    }

    pub fn note(&mut self, text: &str) {
        self.lines.push(format!("# {text}"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_text(&self) -> String {
        let mut out = self.lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub wall_time_ms: u128,
    pub seed: u64,
    pub steps: usize,
}

/// One trained network plus its provenance.
pub struct TrainedMember {
    /// Directory-style label: `model`, `member_<alpha>`, or `fold_<i>`.
    pub label: String,
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

enum LossKind {
    Dice,
    DiceCe,
    TverskyFixed(TverskyParams),
    TverskyPerBatch,
}

enum AnyModel {
    Plain(PlainModel),
    Hyper(HyperModel),
}

fn assemble_batch(
    samples: &[&SyntheticSample],
    picks: &[usize],
    cfg: &TrainConfig,
    aug_rng: &mut Rng,
) -> Result<(Tensor, Tensor), TrainError> {
    let b = picks.len();
    let p = cfg.patch;
    let mut images = Vec::with_capacity(b * p * p);
    let mut labels = Vec::with_capacity(b * p * p);
    for &i in picks {
        let mut sample = samples[i].clone();
        if cfg.augment {
            sample.image = random_gamma(&sample.image, aug_rng);
            random_flip(&mut sample, aug_rng, crate::synthdata::FLIP_PROBABILITY);
        }
        let (img, ann, _) = random_crop_biased(&sample, p, aug_rng, cfg.fg_crop_retries)?;
        images.extend_from_slice(img.data());
        labels.extend(ann.data().iter().map(|&v| f64::from(v)));
    }
    Ok((
        Tensor::new(vec![b, 1, p, p], images)?,
        Tensor::new(vec![b, 1, p, p], labels)?,
    ))
}

/// One full optimization run over `samples`. The member seed fixes
/// initialization, data order, augmentation, and hyperparameter draws.
fn train_one(
    samples: &[&SyntheticSample],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    member_seed: u64,
    loss_kind: LossKind,
    dropout: Option<f64>,
    log: &mut TrainLog,
) -> Result<(AnyModel, TrainReport), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let start = Instant::now();
    let mut model = match spec.kind {
        ModelKind::Plain => AnyModel::Plain(PlainModel::init(spec.clone(), member_seed)?),
        ModelKind::Hyper => AnyModel::Hyper(HyperModel::init(spec.clone(), member_seed)?),
    };
    let mut adam = Adam::new(AdamConfig::new(cfg.effective_lr(), cfg.weight_decay));
    let mut order_rng = Rng::for_stream(member_seed, "order");
    let mut aug_rng = Rng::for_stream(member_seed, "augment");
    let mut dropout_rng = Rng::for_stream(member_seed, "dropout");
    let mut alpha_rng = Rng::for_stream(member_seed, "alpha");
    let loss_cfg = LossConfig::new(cfg.smooth, cfg.dice_ce_mix)?;

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut total_steps = 0usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for (step, picks) in order.chunks(cfg.minibatch).enumerate() {
            let (images, label_tensor) = assemble_batch(samples, picks, cfg, &mut aug_rng)?;
            let mut tape = Tape::new();
            // Exactly one hyperparameter draw per optimizer step.
            let h = match &loss_kind {
                LossKind::TverskyFixed(h) => Some(*h),
                LossKind::TverskyPerBatch => Some(sample_tversky_params(&mut alpha_rng)),
                _ => None,
            };
            let (pred, bound) = match &mut model {
                AnyModel::Plain(m) => m.forward_train(
                    &mut tape,
                    &images,
                    dropout.map(|rate| (rate, &mut dropout_rng)),
                )?,
                AnyModel::Hyper(m) => {
                    m.forward_train(&mut tape, &images, h.as_ref().expect("hyper loss has h"))?
                }
            };
            let g = tape.constant(label_tensor);
            let loss = match &loss_kind {
                LossKind::Dice => soft_dice_loss(&mut tape, pred, g, cfg.smooth)?,
                LossKind::DiceCe => dice_ce_loss(&mut tape, pred, g, &loss_cfg)?,
                LossKind::TverskyFixed(_) | LossKind::TverskyPerBatch => {
                    tversky_loss(&mut tape, pred, g, &h.expect("tversky has h"), cfg.smooth)?
                }
            };
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step,
                    seed: member_seed,
                    alpha: h.map(|h| h.alpha()).unwrap_or(f64::NAN),
                });
            }
            tape.backward(loss)?;
            let grads = bound.collect_grads(&tape);
            let params = match &mut model {
                AnyModel::Plain(m) => m.params_mut(),
                AnyModel::Hyper(m) => m.params_mut(),
            };
            adam.step(params, &grads)?;
            let logged_alpha = match &loss_kind {
                LossKind::Dice => Some(0.5),
                LossKind::DiceCe => None,
                _ => h.map(|h| h.alpha()),
            };
            log.step(
                epoch,
                step,
                logged_alpha,
                loss_value,
                start.elapsed().as_millis(),
            );
            epoch_loss += loss_value;
            epoch_steps += 1;
            total_steps += 1;
        }
        epoch_losses.push(epoch_loss / epoch_steps.max(1) as f64);
    }

    let report = TrainReport {
        epoch_losses,
        wall_time_ms: start.elapsed().as_millis(),
        seed: member_seed,
        steps: total_steps,
    };
    Ok((model, report))
}

fn to_member(
    label: String,
    model: AnyModel,
    report: TrainReport,
    cfg: &TrainConfig,
    adam_snapshot: Option<crate::tensor::AdamSnapshot>,
) -> TrainedMember {
    let meta = TrainMeta {
        seed: report.seed,
        epoch: cfg.epochs,
        loss_curve: report.epoch_losses.clone(),
    };
    let checkpoint = match &model {
        AnyModel::Plain(m) => Checkpoint::from_plain(m, meta, adam_snapshot),
        AnyModel::Hyper(m) => Checkpoint::from_hyper(m, meta, adam_snapshot),
    };
    TrainedMember {
        label,
        checkpoint,
        report,
    }
}

fn require_kind(spec: &ModelSpec, kind: ModelKind, strategy: Strategy) -> Result<(), TrainError> {
    if spec.kind != kind {
        return Err(TrainError::InvalidConfig(format!(
            "strategy {} needs a {} model spec",
            strategy.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

/// Train one plain network with the strategy's loss (soft Dice, Dice-CE, or
/// Dice-CE with channel dropout after every encoder block).
pub fn train_single(
    samples: &[SyntheticSample],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<TrainedMember, TrainError> {
    cfg.validate()?;
    require_kind(spec, ModelKind::Plain, cfg.strategy)?;
    let (loss_kind, dropout) = match cfg.strategy {
        Strategy::SingleDice => (LossKind::Dice, None),
        Strategy::SingleDiceCe => (LossKind::DiceCe, None),
        Strategy::Dropout => (LossKind::DiceCe, Some(cfg.dropout_rate)),
        other => {
            return Err(TrainError::InvalidConfig(format!(
                "train_single cannot run strategy {}",
                other.as_str()
            )))
        }
    };
    let refs: Vec<&SyntheticSample> = samples.iter().collect();
    let (model, report) = train_one(&refs, spec, cfg, cfg.seed, loss_kind, dropout, log)?;
    Ok(to_member("model".into(), model, report, cfg, None))
}

/// Label for a varying-Tversky member directory.
pub fn member_label(alpha: f64) -> String {
    format!("member_{alpha}")
}

/// Train the varying-Tversky ensemble: one plain network per grid alpha,
/// all on the same training set, with member seeds `seed + 1 + index`.
pub fn train_vtv_ensemble(
    samples: &[SyntheticSample],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<Vec<TrainedMember>, TrainError> {
    cfg.validate()?;
    require_kind(spec, ModelKind::Plain, cfg.strategy)?;
    if cfg.strategy != Strategy::VtvEnsemble {
        return Err(TrainError::InvalidConfig(
            "train_vtv_ensemble requires strategy vtv_ensemble".into(),
        ));
    }
    let refs: Vec<&SyntheticSample> = samples.iter().collect();
    let mut members = Vec::with_capacity(cfg.alpha_grid.len());
    for (i, &alpha) in cfg.alpha_grid.iter().enumerate() {
        let h = TverskyParams::new(alpha)?;
        log.note(&format!("member alpha={alpha}"));
        let (model, report) = train_one(
            &refs,
            spec,
            cfg,
            cfg.seed + 1 + i as u64,
            LossKind::TverskyFixed(h),
            None,
            log,
        )?;
        members.push(to_member(member_label(alpha), model, report, cfg, None));
    }
    Ok(members)
}

/// Train the k-fold subset ensemble: member i trains with Dice-CE on the
/// dataset minus fold i, with its own initialization seed.
pub fn train_subset_ensemble(
    samples: &[SyntheticSample],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<Vec<TrainedMember>, TrainError> {
    cfg.validate()?;
    require_kind(spec, ModelKind::Plain, cfg.strategy)?;
    if cfg.strategy != Strategy::SubsetEnsemble {
        return Err(TrainError::InvalidConfig(
            "train_subset_ensemble requires strategy subset_ensemble".into(),
        ));
    }
    let folds = kfold_indices(samples.len(), cfg.ensemble_size, cfg.seed)?;
    let mut members = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        let held: std::collections::BTreeSet<usize> = fold.iter().copied().collect();
        let train_refs: Vec<&SyntheticSample> = samples
            .iter()
            .enumerate()
            .filter(|(idx, _)| !held.contains(idx))
            .map(|(_, s)| s)
            .collect();
        log.note(&format!("fold {i} holds out {} samples", fold.len()));
        let (model, report) = train_one(
            &train_refs,
            spec,
            cfg,
            cfg.seed + 1 + i as u64,
            LossKind::DiceCe,
            None,
            log,
        )?;
        members.push(to_member(format!("fold_{i}"), model, report, cfg, None));
    }
    Ok(members)
}

/// Train the hypernetwork: one Tversky hyperparameter drawn per minibatch.
pub fn train_hypernet(
    samples: &[SyntheticSample],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<TrainedMember, TrainError> {
    cfg.validate()?;
    require_kind(spec, ModelKind::Hyper, cfg.strategy)?;
    if cfg.strategy != Strategy::Hypernet {
        return Err(TrainError::InvalidConfig(
            "train_hypernet requires strategy hypernet".into(),
        ));
    }
    let refs: Vec<&SyntheticSample> = samples.iter().collect();
    let (model, report) = train_one(
        &refs,
        spec,
        cfg,
        cfg.seed,
        LossKind::TverskyPerBatch,
        None,
        log,
    )?;
    Ok(to_member("model".into(), model, report, cfg, None))
}
