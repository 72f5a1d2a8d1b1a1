//! Rough timing of one training step at study scale.

use std::time::Instant;

use segprob_core::models::ModelSpec;
use segprob_core::synthdata::{generate_dataset, DatasetConfig};
use segprob_core::trainer::{train_hypernet, train_single, Strategy, TrainConfig, TrainLog};

fn main() {
    let data = generate_dataset(&DatasetConfig {
        n_samples: 16,
        grid: 64,
        blob_count: (1, 3),
        blob_scale: (5.0, 10.0),
        confuser_count: (0, 2),
        noise_std: 0.03,
        tau_range: (0.35, 0.65),
        train_fraction: 0.75,
        seed: 1,
    })
    .unwrap();

    let spec = ModelSpec::plain(vec![8, 16, 32, 64], 1);
    let mut cfg = TrainConfig::new(Strategy::SingleDiceCe, 3);
    cfg.epochs = 4; // 2 steps/epoch at minibatch 8 over 16 samples
    cfg.minibatch = 8;
    cfg.patch = 64;
    let mut log = TrainLog::new();
    let t = Instant::now();
    let member = train_single(&data, &spec, &cfg, &mut log).unwrap();
    let steps = member.report.steps;
    println!(
        "plain [8,16,32,64] 64x64 batch8: {} steps in {:?} -> {:.0} ms/step",
        steps,
        t.elapsed(),
        t.elapsed().as_millis() as f64 / steps as f64
    );

    let spec = ModelSpec::hyper(vec![8, 16, 32, 64], 1, 16, 3);
    let mut cfg = TrainConfig::new(Strategy::Hypernet, 3);
    cfg.epochs = 4;
    cfg.minibatch = 8;
    cfg.patch = 64;
    let mut log = TrainLog::new();
    let t = Instant::now();
    let member = train_hypernet(&data, &spec, &cfg, &mut log).unwrap();
    let steps = member.report.steps;
    println!(
        "hyper z16 m3: {} steps in {:?} -> {:.0} ms/step",
        steps,
        t.elapsed(),
        t.elapsed().as_millis() as f64 / steps as f64
    );
}
