//! Phase timing of one training step.

use std::time::Instant;

use segprob_core::models::{ModelSpec, PlainModel};
use segprob_core::rng::Rng;
use segprob_core::losses::{dice_ce_loss, LossConfig};
use segprob_core::tensor::{Adam, AdamConfig, Tape, Tensor};

fn main() {
    let spec = ModelSpec::plain(vec![8, 16, 32, 64], 1);
    let mut model = PlainModel::init(spec, 3).unwrap();
    let mut rng = Rng::new(1);
    let images = Tensor::new(
        vec![8, 1, 64, 64],
        (0..8 * 4096).map(|_| rng.uniform()).collect(),
    )
    .unwrap();
    let labels = Tensor::new(
        vec![8, 1, 64, 64],
        (0..8 * 4096).map(|_| f64::from(rng.bernoulli(0.2))).collect(),
    )
    .unwrap();
    let mut adam = Adam::new(AdamConfig::new(1e-4, 1e-3));

    for round in 0..3 {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let (pred, bound) = model.forward_train(&mut tape, &images, None).unwrap();
        let g = tape.constant(labels.clone());
        let loss = dice_ce_loss(&mut tape, pred, g, &LossConfig::default()).unwrap();
        let t_fwd = t0.elapsed();

        let t1 = Instant::now();
        tape.backward(loss).unwrap();
        let t_bwd = t1.elapsed();

        let t2 = Instant::now();
        let grads = bound.collect_grads(&tape);
        adam.step(model.params_mut(), &grads).unwrap();
        let t_opt = t2.elapsed();

        println!(
            "round {round}: forward {:?}  backward {:?}  opt {:?}  total {:?}",
            t_fwd,
            t_bwd,
            t_opt,
            t0.elapsed()
        );
    }
}
