//! Scratch experiment: one seed of the training study, printing the
//! criterion-style metrics. Used to pick training settings.
//!
//! Usage: study <seed> <train_n> <val_n> <epochs_member> <epochs_hyper> <lr_plain> <lr_hyper>

use std::time::Instant;

use segprob_core::grid::ProbabilityMap;
use segprob_core::infer::{average_probability_maps, sliding_window_predict, HyperAt};
use segprob_core::losses::TverskyParams;
use segprob_core::metrics::{
    aggregate, default_tau_grid, sweep_range, EvalSample,
};
use segprob_core::models::{HyperModel, ModelSpec, PlainModel};
use segprob_core::synthdata::{generate_dataset, DatasetConfig, SyntheticSample};
use segprob_core::trainer::{
    train_hypernet, train_single, train_vtv_ensemble, Strategy, TrainConfig, TrainLog,
};

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
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
    p.data().iter().sum::<f64>()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = get(1, 0.0) as u64;
    let train_n = get(2, 40.0) as usize;
    let val_n = get(3, 100.0) as usize;
    let epochs_member = get(4, 60.0) as usize;
    let epochs_hyper = get(5, 120.0) as usize;
    let lr_plain = get(6, 1e-3);
    let lr_hyper = get(7, 1e-4);
    let z = get(8, 16.0) as usize;
    let m = get(9, 3.0) as usize;
    let scale_lo = get(10, 5.0);
    let scale_hi = get(11, 10.0);
    let blobs_lo = get(12, 1.0) as usize;
    let blobs_hi = get(13, 3.0) as usize;
    let tau_lo = get(14, 0.35);
    let tau_hi = get(15, 0.65);
    let lr_single = get(16, 0.0);
    let lr_single = if lr_single > 0.0 { lr_single } else { lr_plain };

    let t0 = Instant::now();
    let data_cfg = DatasetConfig {
        n_samples: train_n + val_n,
        grid: 64,
        blob_count: (blobs_lo, blobs_hi),
        blob_scale: (scale_lo, scale_hi),
        confuser_count: (0, 2),
        noise_std: 0.03,
        tau_range: (tau_lo, tau_hi),
        train_fraction: train_n as f64 / (train_n + val_n) as f64,
        seed: 1000 + seed,
    };
    let data = generate_dataset(&data_cfg).unwrap();
    let (train, val) = data.split_at(train_n);
    let train: Vec<SyntheticSample> = train.to_vec();
    println!("dataset: {} train / {} val ({:?})", train.len(), val.len(), t0.elapsed());

    let spec = ModelSpec::plain(vec![8, 16, 32, 64], 1);
    let hyper_spec = ModelSpec::hyper(vec![8, 16, 32, 64], 1, z, m);

    // Single Dice-CE baseline.
    let t = Instant::now();
    let mut cfg = TrainConfig::new(Strategy::SingleDiceCe, 9000 + seed);
    cfg.epochs = epochs_member;
    cfg.patch = 64;
    cfg.lr = Some(lr_single);
    let mut log = TrainLog::new();
    let single = train_single(&train, &spec, &cfg, &mut log).unwrap();
    let single_model = PlainModel::from_checkpoint(&single.checkpoint).unwrap();
    println!(
        "single: {:?}, loss {:.4} -> {:.4}",
        t.elapsed(),
        single.report.epoch_losses[0],
        single.report.epoch_losses.last().unwrap()
    );

    // V-Tv ensemble.
    let t = Instant::now();
    let mut cfg = TrainConfig::new(Strategy::VtvEnsemble, 100 + seed);
    cfg.epochs = epochs_member;
    cfg.patch = 64;
    cfg.lr = Some(lr_plain);
    let mut log = TrainLog::new();
    let members = train_vtv_ensemble(&train, &spec, &cfg, &mut log).unwrap();
    let member_models: Vec<(f64, PlainModel)> = members
        .iter()
        .zip(&cfg.alpha_grid)
        .map(|(m, &a)| (a, PlainModel::from_checkpoint(&m.checkpoint).unwrap()))
        .collect();
    println!("vtv ensemble: {:?}", t.elapsed());
    for (m, &a) in members.iter().zip(&cfg.alpha_grid) {
        println!(
            "  alpha {a}: loss {:.4} -> {:.4}",
            m.report.epoch_losses[0],
            m.report.epoch_losses.last().unwrap()
        );
    }

    // Hypernet.
    let t = Instant::now();
    let mut cfg = TrainConfig::new(Strategy::Hypernet, 200 + seed);
    cfg.epochs = epochs_hyper;
    cfg.patch = 64;
    cfg.lr = Some(lr_hyper);
    let mut log = TrainLog::new();
    let hyper = train_hypernet(&train, &hyper_spec, &cfg, &mut log).unwrap();
    let hyper_model = HyperModel::from_checkpoint(&hyper.checkpoint).unwrap();
    println!(
        "hypernet: {:?}, loss {:.4} -> {:.4}",
        t.elapsed(),
        hyper.report.epoch_losses[0],
        hyper.report.epoch_losses.last().unwrap()
    );

    // Evaluation.
    let t = Instant::now();
    let alpha_grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut member_area = vec![0.0; 5];
    let mut hyper_area = vec![0.0; 5];
    let mut single_samples = Vec::new();
    let mut vtv_samples = Vec::new();
    let mut hyper_samples = Vec::new();
    for s in val {
        let sp = sliding_window_predict(&s.image, &single_model, 64, 0.8).unwrap();
        let member_maps: Vec<ProbabilityMap> = member_models
            .iter()
            .map(|(_, m)| sliding_window_predict(&s.image, m, 64, 0.8).unwrap())
            .collect();
        let hyper_maps: Vec<ProbabilityMap> = alpha_grid
            .iter()
            .map(|&a| {
                let at = HyperAt {
                    model: &hyper_model,
                    h: TverskyParams::new(a).unwrap(),
                };
                sliding_window_predict(&s.image, &at, 64, 0.8).unwrap()
            })
            .collect();
        for (i, m) in member_maps.iter().enumerate() {
            member_area[i] += soft_area(m);
        }
        for (i, m) in hyper_maps.iter().enumerate() {
            hyper_area[i] += soft_area(m);
        }
        let vtv_map = average_probability_maps(&member_maps).unwrap();
        let hyper_map = average_probability_maps(&hyper_maps).unwrap();
        single_samples.push(EvalSample {
            prob: sp,
            truth: s.annotation.clone(),
            p_true: Some(s.p_true.clone()),
        });
        vtv_samples.push(EvalSample {
            prob: vtv_map,
            truth: s.annotation.clone(),
            p_true: Some(s.p_true.clone()),
        });
        hyper_samples.push(EvalSample {
            prob: hyper_map,
            truth: s.annotation.clone(),
            p_true: Some(s.p_true.clone()),
        });
    }
    println!("inference: {:?}", t.elapsed());

    let alphas: Vec<f64> = alpha_grid.to_vec();
    println!("member areas: {member_area:?}");
    println!("hyper areas:  {hyper_area:?}");
    let rho_vtv = spearman(&alphas, &member_area);
    let rho_hyper = spearman(&alphas, &hyper_area);
    println!("spearman vtv {rho_vtv:.3}  hyper {rho_hyper:.3}");

    let taus = default_tau_grid();
    let rs = aggregate(&single_samples, &taus).unwrap();
    let rv = aggregate(&vtv_samples, &taus).unwrap();
    let rh = aggregate(&hyper_samples, &taus).unwrap();
    for (name, r) in [("single", &rs), ("vtv", &rv), ("hyper", &rh)] {
        println!(
            "{name}: dice {:.3} mae {:.4} brier {:.4} polar {:.4} auc {:?}",
            r.micro.dice,
            r.micro.prob_mae.unwrap(),
            r.micro.brier.unwrap(),
            r.micro.polarization_fraction.unwrap(),
            r.micro.roc_auc
        );
    }
    // Criterion-style ratios.
    let mae_s = rs.micro.prob_mae.unwrap();
    println!(
        "mae ratios: vtv {:.3} hyper {:.3} (need <= 0.8)",
        rv.micro.prob_mae.unwrap() / mae_s,
        rh.micro.prob_mae.unwrap() / mae_s
    );
    let pol_s = rs.micro.polarization_fraction.unwrap();
    println!(
        "polar ratios: vtv {:.2} hyper {:.2} (need >= 2)",
        rv.micro.polarization_fraction.unwrap() / pol_s,
        rh.micro.polarization_fraction.unwrap() / pol_s
    );
    // Sweep ranges over the inner grid 0.05..0.95.
    let inner: Vec<f64> = (1..=19).map(|i| f64::from(i) * 0.05).collect();
    let range_of = |samples: &[EvalSample]| {
        let r = aggregate(samples, &inner).unwrap();
        sweep_range(&r.micro.dice_vs_threshold)
    };
    let (rg_s, rg_v, rg_h) = (
        range_of(&single_samples),
        range_of(&vtv_samples),
        range_of(&hyper_samples),
    );
    println!(
        "sweep ranges: single {rg_s:.3} vtv {rg_v:.3} ({:.1}x) hyper {rg_h:.3} ({:.1}x) (need >= 3x)",
        rg_v / rg_s,
        rg_h / rg_s
    );
    println!("total {:?}", t0.elapsed());
}
