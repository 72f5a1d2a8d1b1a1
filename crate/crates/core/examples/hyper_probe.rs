//! Scratch experiment: hypernetwork conditioning strength alone.
//!
//! Usage: hyper_probe <seed> <epochs> <lr> <z> <m> <minibatch> [scale_lo scale_hi blobs_lo blobs_hi]

use std::time::Instant;

use segprob_core::grid::ProbabilityMap;
use segprob_core::infer::{sliding_window_predict, HyperAt};
use segprob_core::losses::TverskyParams;
use segprob_core::models::{HyperModel, ModelSpec};
use segprob_core::synthdata::{generate_dataset, DatasetConfig};
use segprob_core::trainer::{train_hypernet, Strategy, TrainConfig, TrainLog};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = get(1, 0.0) as u64;
    let epochs = get(2, 300.0) as usize;
    let lr = get(3, 3e-4);
    let z = get(4, 32.0) as usize;
    let m = get(5, 4.0) as usize;
    let minibatch = get(6, 8.0) as usize;
    let scale_lo = get(7, 6.0);
    let scale_hi = get(8, 12.0);
    let blobs_lo = get(9, 1.0) as usize;
    let blobs_hi = get(10, 2.0) as usize;
    let tau_lo = get(11, 0.35);
    let tau_hi = get(12, 0.65);

    let t0 = Instant::now();
    let data = generate_dataset(&DatasetConfig {
        n_samples: 32 + 40,
        grid: 64,
        blob_count: (blobs_lo, blobs_hi),
        blob_scale: (scale_lo, scale_hi),
        confuser_count: (0, 2),
        noise_std: 0.03,
        tau_range: (tau_lo, tau_hi),
        train_fraction: 32.0 / 72.0,
        seed: 7000 + seed,
    })
    .unwrap();
    let (train, val) = data.split_at(32);

    let spec = ModelSpec::hyper(vec![8, 16, 32, 64], 1, z, m);
    let mut cfg = TrainConfig::new(Strategy::Hypernet, 300 + seed);
    cfg.epochs = epochs;
    cfg.minibatch = minibatch;
    cfg.patch = 64;
    cfg.lr = Some(lr);
    let mut log = TrainLog::new();
    let member = train_hypernet(&train.to_vec(), &spec, &cfg, &mut log).unwrap();
    let model = HyperModel::from_checkpoint(&member.checkpoint).unwrap();
    println!(
        "trained {} steps in {:?}; loss {:.4} -> {:.4}",
        member.report.steps,
        t0.elapsed(),
        member.report.epoch_losses[0],
        member.report.epoch_losses.last().unwrap()
    );

    let alpha_grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut areas = [0.0f64; 5];
    let mut mid_fraction = [0.0f64; 5];
    for s in val {
        for (i, &alpha) in alpha_grid.iter().enumerate() {
            let at = HyperAt {
                model: &model,
                h: TverskyParams::new(alpha).unwrap(),
            };
            let map: ProbabilityMap = sliding_window_predict(&s.image, &at, 64, 0.8).unwrap();
            areas[i] += map.data().iter().sum::<f64>();
            mid_fraction[i] += map
                .data()
                .iter()
                .filter(|&&v| v > 0.1 && v < 0.9)
                .count() as f64
                / map.data().len() as f64;
        }
    }
    println!("areas by alpha: {areas:?}");
    println!("mid fraction by alpha: {mid_fraction:?}");
    let monotone = areas.windows(2).all(|w| w[1] <= w[0]);
    println!("monotone non-increasing: {monotone}");
    println!("total {:?}", t0.elapsed());
}
