//! The training study behind acceptance criteria 5-7.
//!
//! One seed trains the full §-style comparison at desk scale: a single
//! Dice-CE baseline, the five-member varying-Tversky ensemble, and the
//! hypernetwork. Criterion 5 and 7 read the first seed; criterion 6 demands
//! its margins on at least [`REQUIRED_PASSING_SEEDS`] of [`STUDY_SEEDS`]
//! independent seeds. Members within a seed are trained on worker threads;
//! every member is fully seeded, so the parallel result is identical to the
//! serial one.

use std::time::Instant;

use segprob_core::grid::ProbabilityMap;
use segprob_core::infer::{average_probability_maps, sliding_window_predict, HyperAt};
use segprob_core::losses::TverskyParams;
use segprob_core::metrics::{aggregate, sweep_range, EvalSample};
use segprob_core::models::{HyperModel, ModelSpec, PlainModel};
use segprob_core::synthdata::{generate_dataset, DatasetConfig, SyntheticSample};
use segprob_core::trainer::{
    train_hypernet, train_single, train_vtv_ensemble, Strategy, TrainConfig, TrainLog,
};

// ── Study configuration (fixed here, reported with the criteria) ────

/// Independent repetitions for criterion 6.
pub const STUDY_SEEDS: usize = 5;
/// Seeds that must clear criterion 6's margins.
pub const REQUIRED_PASSING_SEEDS: usize = 4;
/// Training / validation sizes (64x64 grids).
const TRAIN_N: usize = 40;
const VAL_N: usize = 100;
const GRID: usize = 64;
/// Member hyperparameters of the varying-Tversky ensemble.
const ALPHA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
/// Epoch budgets; desk-scale counterparts of the long reference schedules.
const MEMBER_EPOCHS: usize = 60;
const HYPER_EPOCHS: usize = 150;
/// Desk-scale learning rates: plain networks converge in a few hundred
/// steps at 1e-3; the hypernetwork trains at a third of that for stability.
const LR_PLAIN: f64 = 1e-3;
const LR_HYPER: f64 = 3e-4;
/// Hypernetwork inference grid (the ensemble default: 0.1..0.9 step 0.1).
const HYPER_INFER_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Criterion 5: Spearman rank correlation bound.
const SPEARMAN_BOUND: f64 = -0.8;
/// Criterion 6: relative MAE improvement (<= 0.8) and polarization-fraction
/// ratio (>= 2).
const MAE_RATIO_BOUND: f64 = 0.8;
const POLARIZATION_RATIO_BOUND: f64 = 2.0;
/// Criterion 7: dice-vs-threshold spread multiple over the vanilla network.
const SWEEP_RANGE_MULTIPLE: f64 = 3.0;

pub struct StudyOutcome {
    pub criterion5_pass: bool,
    pub criterion5_details: String,
    pub criterion6_pass: bool,
    pub criterion6_details: String,
    pub criterion7_pass: bool,
    pub criterion7_details: String,
}

struct SeedResult {
    rho_vtv: f64,
    rho_hyper: f64,
    mae_ratio_vtv: f64,
    mae_ratio_hyper: f64,
    polar_ratio_vtv: f64,
    polar_ratio_hyper: f64,
    range_single: f64,
    range_vtv: f64,
    range_hyper: f64,
}

impl SeedResult {
    fn criterion6_ok(&self) -> bool {
        self.mae_ratio_vtv <= MAE_RATIO_BOUND
            && self.mae_ratio_hyper <= MAE_RATIO_BOUND
            && self.polar_ratio_vtv >= POLARIZATION_RATIO_BOUND
            && self.polar_ratio_hyper >= POLARIZATION_RATIO_BOUND
    }
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite"));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn soft_area(p: &ProbabilityMap) -> f64 {
    p.data().iter().sum()
}

fn study_dataset(seed: u64) -> Vec<SyntheticSample> {
    generate_dataset(&DatasetConfig {
        n_samples: TRAIN_N + VAL_N,
        grid: GRID,
        blob_count: (1, 3),
        blob_scale: (5.0, 10.0),
        confuser_count: (0, 2),
        noise_std: 0.03,
        tau_range: (0.35, 0.65),
        train_fraction: TRAIN_N as f64 / (TRAIN_N + VAL_N) as f64,
        seed,
    })
    .expect("valid study dataset config")
}

fn plain_spec() -> ModelSpec {
    ModelSpec::plain(vec![8, 16, 32, 64], 1)
}

fn hyper_spec() -> ModelSpec {
    ModelSpec::hyper(vec![8, 16, 32, 64], 1, 16, 3)
}

fn member_cfg(strategy: Strategy, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(strategy, seed);
    cfg.epochs = MEMBER_EPOCHS;
    cfg.minibatch = 8;
    cfg.patch = GRID;
    cfg.lr = Some(LR_PLAIN);
    cfg
}

fn run_seed(seed_index: usize) -> SeedResult {
    let wall = Instant::now();
    let base_seed = 4200 + 1000 * seed_index as u64;
    let data = study_dataset(base_seed);
    let (train, val) = data.split_at(TRAIN_N);
    let train = train.to_vec();

    // Single Dice-CE baseline, the five ensemble members, and the
    // hypernetwork are independent jobs; run them on two workers.
    let single_cfg = member_cfg(Strategy::SingleDiceCe, base_seed + 1);
    let vtv_cfg = {
        let mut cfg = member_cfg(Strategy::VtvEnsemble, base_seed + 10);
        cfg.alpha_grid = ALPHA_GRID.to_vec();
        cfg
    };
    let hyper_cfg = {
        let mut cfg = TrainConfig::new(Strategy::Hypernet, base_seed + 20);
        cfg.epochs = HYPER_EPOCHS;
        cfg.minibatch = 8;
        cfg.patch = GRID;
        cfg.lr = Some(LR_HYPER);
        cfg
    };

    let (single_model, member_models, hyper_model) = std::thread::scope(|scope| {
        let train_a = &train;
        let left = scope.spawn(move || {
            let mut log = TrainLog::new();
            let single = train_single(train_a, &plain_spec(), &single_cfg, &mut log)
                .expect("single training");
            let mut log = TrainLog::new();
            let hyper = train_hypernet(train_a, &hyper_spec(), &hyper_cfg, &mut log)
                .expect("hypernet training");
            (single, hyper)
        });
        let mut log = TrainLog::new();
        let members = train_vtv_ensemble(&train, &plain_spec(), &vtv_cfg, &mut log)
            .expect("ensemble training");
        let (single, hyper) = left.join().expect("worker thread");
        let single_model = PlainModel::from_checkpoint(&single.checkpoint).expect("load single");
        let member_models: Vec<PlainModel> = members
            .iter()
            .map(|m| PlainModel::from_checkpoint(&m.checkpoint).expect("load member"))
            .collect();
        let hyper_model = HyperModel::from_checkpoint(&hyper.checkpoint).expect("load hyper");
        (single_model, member_models, hyper_model)
    });

    // Validation predictions. Every map is a full-image window (the study
    // grids equal the training patch), so sliding inference is exact.
    let mut member_area = [0.0f64; ALPHA_GRID.len()];
    let mut hyper_area = [0.0f64; ALPHA_GRID.len()];
    let mut single_samples = Vec::with_capacity(val.len());
    let mut vtv_samples = Vec::with_capacity(val.len());
    let mut hyper_samples = Vec::with_capacity(val.len());
    for s in val {
        let single_map = sliding_window_predict(&s.image, &single_model, GRID, 0.8)
            .expect("single prediction");
        let member_maps: Vec<ProbabilityMap> = member_models
            .iter()
            .map(|m| sliding_window_predict(&s.image, m, GRID, 0.8).expect("member prediction"))
            .collect();
        for (area, map) in member_area.iter_mut().zip(&member_maps) {
            *area += soft_area(map);
        }
        for (area, &alpha) in hyper_area.iter_mut().zip(&ALPHA_GRID) {
            let at = HyperAt {
                model: &hyper_model,
                h: TverskyParams::new(alpha).expect("grid alpha"),
            };
            let map = sliding_window_predict(&s.image, &at, GRID, 0.8).expect("hyper prediction");
            *area += soft_area(&map);
        }
        let hyper_ensemble_maps: Vec<ProbabilityMap> = HYPER_INFER_GRID
            .iter()
            .map(|&alpha| {
                let at = HyperAt {
                    model: &hyper_model,
                    h: TverskyParams::new(alpha).expect("grid alpha"),
                };
                sliding_window_predict(&s.image, &at, GRID, 0.8).expect("hyper prediction")
            })
            .collect();
        let vtv_map = average_probability_maps(&member_maps).expect("vtv ensemble");
        let hyper_map = average_probability_maps(&hyper_ensemble_maps).expect("hyper ensemble");
        for (collection, map) in [
            (&mut single_samples, single_map),
            (&mut vtv_samples, vtv_map),
            (&mut hyper_samples, hyper_map),
        ] {
            collection.push(EvalSample {
                prob: map,
                truth: s.annotation.clone(),
                p_true: Some(s.p_true.clone()),
            });
        }
    }

    let alphas = ALPHA_GRID.to_vec();
    let rho_vtv = spearman(&alphas, &member_area);
    let rho_hyper = spearman(&alphas, &hyper_area);

    // Dice-vs-threshold spread over the interior grid 0.05..0.95.
    let inner: Vec<f64> = (1..=19).map(|i| f64::from(i) * 0.05).collect();
    let report_single = aggregate(&single_samples, &inner).expect("aggregate single");
    let report_vtv = aggregate(&vtv_samples, &inner).expect("aggregate vtv");
    let report_hyper = aggregate(&hyper_samples, &inner).expect("aggregate hyper");

    let mae_single = report_single.micro.prob_mae.expect("p_true present");
    let polar_single = report_single
        .micro
        .polarization_fraction
        .expect("p_true present");
    let result = SeedResult {
        rho_vtv,
        rho_hyper,
        mae_ratio_vtv: report_vtv.micro.prob_mae.expect("p_true") / mae_single,
        mae_ratio_hyper: report_hyper.micro.prob_mae.expect("p_true") / mae_single,
        polar_ratio_vtv: report_vtv.micro.polarization_fraction.expect("p_true")
            / polar_single,
        polar_ratio_hyper: report_hyper.micro.polarization_fraction.expect("p_true")
            / polar_single,
        range_single: sweep_range(&report_single.micro.dice_vs_threshold),
        range_vtv: sweep_range(&report_vtv.micro.dice_vs_threshold),
        range_hyper: sweep_range(&report_hyper.micro.dice_vs_threshold),
    };
    println!(
        "study seed {seed_index}: rho(vtv) {:.3}, rho(hyper) {:.3}, mae ratios {:.3}/{:.3}, \
         polarization ratios {:.2}/{:.2}, sweep ranges {:.3}/{:.3}/{:.3} ({:?})",
        result.rho_vtv,
        result.rho_hyper,
        result.mae_ratio_vtv,
        result.mae_ratio_hyper,
        result.polar_ratio_vtv,
        result.polar_ratio_hyper,
        result.range_single,
        result.range_vtv,
        result.range_hyper,
        wall.elapsed()
    );
    result
}

pub fn run_study() -> StudyOutcome {
    let results: Vec<SeedResult> = (0..STUDY_SEEDS).map(run_seed).collect();
    let first = &results[0];

    let criterion5_pass = first.rho_vtv <= SPEARMAN_BOUND && first.rho_hyper <= SPEARMAN_BOUND;
    let criterion5_details = format!(
        "soft foreground area vs alpha: Spearman rho vtv = {:.3}, hyper = {:.3} (bound {SPEARMAN_BOUND})",
        first.rho_vtv, first.rho_hyper
    );

    let passing = results.iter().filter(|r| r.criterion6_ok()).count();
    let criterion6_pass = passing >= REQUIRED_PASSING_SEEDS;
    let criterion6_details = format!(
        "{passing}/{STUDY_SEEDS} seeds meet mae ratio <= {MAE_RATIO_BOUND} and polarization ratio >= {POLARIZATION_RATIO_BOUND} \
         (per-seed mae vtv/hyper: {}; polarization vtv/hyper: {})",
        results
            .iter()
            .map(|r| format!("{:.2}/{:.2}", r.mae_ratio_vtv, r.mae_ratio_hyper))
            .collect::<Vec<_>>()
            .join(", "),
        results
            .iter()
            .map(|r| format!("{:.1}/{:.1}", r.polar_ratio_vtv, r.polar_ratio_hyper))
            .collect::<Vec<_>>()
            .join(", "),
    );

    let criterion7_pass = first.range_vtv >= SWEEP_RANGE_MULTIPLE * first.range_single
        && first.range_hyper >= SWEEP_RANGE_MULTIPLE * first.range_single;
    let criterion7_details = format!(
        "dice-vs-threshold range: single {:.3}, vtv {:.3} ({:.1}x), hyper {:.3} ({:.1}x), need {SWEEP_RANGE_MULTIPLE}x",
        first.range_single,
        first.range_vtv,
        first.range_vtv / first.range_single,
        first.range_hyper,
        first.range_hyper / first.range_single
    );

    StudyOutcome {
        criterion5_pass,
        criterion5_details,
        criterion6_pass,
        criterion6_details,
        criterion7_pass,
        criterion7_details,
    }
}
