//! Finite-difference gradient checks for every differentiable operation and
//! both loss families, on randomized small shapes.

use segprob_core::losses::{
    binary_cross_entropy, dice_ce_loss, tversky_loss, LossConfig, TverskyParams,
};
use segprob_core::rng::Rng;
use segprob_core::tensor::gradcheck::{finite_difference_check, FD_TOLERANCE};
use segprob_core::tensor::{BnMode, RunningStats, Tape, Tensor, Var};

/// Values bounded away from 0 so kinked ops (relu, prelu, clamp) stay on one
/// side of their kink across the +/- FD_STEP evaluations.
fn smooth_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.range(0.1, 0.9);
            if rng.bernoulli(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn positive_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.range(0.2, 2.0)).collect();
    Tensor::new(shape, data).unwrap()
}

fn probability_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.range(0.05, 0.95)).collect();
    Tensor::new(shape, data).unwrap()
}

fn binary_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| f64::from(rng.bernoulli(0.5))).collect();
    Tensor::new(shape, data).unwrap()
}

/// Random projection making the op output a scalar so the check exercises
/// every output coordinate with distinct weights.
fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

fn check(name: &str, inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) {
    let report = finite_difference_check(inputs, build);
    assert!(
        report.passes(),
        "{name}: max rel err {:.3e} over {} coords (tolerance {FD_TOLERANCE:.0e})",
        report.max_rel_err,
        report.checked
    );
}

fn random_small_shape(rng: &mut Rng) -> Vec<usize> {
    vec![rng.int_in(2, 5), rng.int_in(2, 6)]
}

#[test]
fn elementwise_binary_ops() {
    let mut rng = Rng::new(100);
    for case in 0..5 {
        let shape = random_small_shape(&mut rng);
        let a = smooth_tensor(&mut rng, shape.clone());
        let b = positive_tensor(&mut rng, shape.clone());
        let proj = smooth_tensor(&mut rng, shape.clone());
        for (name, op) in [
            ("add", 0usize),
            ("sub", 1),
            ("mul", 2),
            ("div", 3),
        ] {
            let proj = proj.clone();
            check(
                &format!("{name}[{case}]"),
                &[a.clone(), b.clone()],
                &move |tape, vars| {
                    let out = match op {
                        0 => tape.add(vars[0], vars[1]).unwrap(),
                        1 => tape.sub(vars[0], vars[1]).unwrap(),
                        2 => tape.mul(vars[0], vars[1]).unwrap(),
                        _ => tape.div(vars[0], vars[1]).unwrap(),
                    };
                    project(tape, out, &proj)
                },
            );
        }
    }
}

#[test]
fn scalar_and_unary_ops() {
    let mut rng = Rng::new(101);
    for case in 0..5 {
        let shape = random_small_shape(&mut rng);
        let x = smooth_tensor(&mut rng, shape.clone());
        let pos = positive_tensor(&mut rng, shape.clone());
        let proj = smooth_tensor(&mut rng, shape.clone());

        let p2 = proj.clone();
        check(&format!("mul_add_scalar[{case}]"), &[x.clone()], &move |tape, v| {
            let y = tape.mul_scalar(v[0], -1.7);
            let y = tape.add_scalar(y, 0.3);
            project(tape, y, &p2)
        });
        let p2 = proj.clone();
        check(&format!("one_minus[{case}]"), &[x.clone()], &move |tape, v| {
            let y = tape.one_minus(v[0]);
            project(tape, y, &p2)
        });
        let p2 = proj.clone();
        check(&format!("ln[{case}]"), &[pos.clone()], &move |tape, v| {
            let y = tape.ln(v[0]);
            project(tape, y, &p2)
        });
        let p2 = proj.clone();
        check(&format!("sigmoid[{case}]"), &[x.clone()], &move |tape, v| {
            let y = tape.sigmoid(v[0]);
            project(tape, y, &p2)
        });
        let p2 = proj.clone();
        check(&format!("relu[{case}]"), &[x.clone()], &move |tape, v| {
            let y = tape.relu(v[0]);
            project(tape, y, &p2)
        });
        // Clamp bounds sit between the value clusters so both branches occur;
        // no input is within FD_STEP of a bound.
        let p2 = proj.clone();
        check(&format!("clamp[{case}]"), &[x.clone()], &move |tape, v| {
            let y = tape.clamp(v[0], -0.5, 0.5);
            project(tape, y, &p2)
        });
        let p2 = proj.clone();
        check(&format!("sum_mean[{case}]"), &[x.clone()], &move |tape, v| {
            let s = tape.sum(v[0]);
            let m = tape.mean(v[0]);
            let both = tape.add(s, m).unwrap();
            let _ = p2.numel();
            both
        });
    }
}

#[test]
fn prelu_input_and_slope() {
    let mut rng = Rng::new(102);
    for case in 0..5 {
        let (n, c, h, w) = (
            rng.int_in(1, 2),
            rng.int_in(1, 3),
            rng.int_in(2, 4),
            rng.int_in(2, 4),
        );
        let x = smooth_tensor(&mut rng, vec![n, c, h, w]);
        let slope = positive_tensor(&mut rng, vec![c]);
        let proj = smooth_tensor(&mut rng, vec![n, c, h, w]);
        check(&format!("prelu[{case}]"), &[x, slope], &move |tape, v| {
            let y = tape.prelu(v[0], v[1]).unwrap();
            project(tape, y, &proj)
        });
    }
}

#[test]
fn structural_ops() {
    let mut rng = Rng::new(103);
    for case in 0..5 {
        let (n, c1, c2, h, w) = (
            rng.int_in(1, 2),
            rng.int_in(1, 3),
            rng.int_in(1, 3),
            rng.int_in(2, 3),
            rng.int_in(2, 3),
        );
        let a = smooth_tensor(&mut rng, vec![n, c1, h, w]);
        let b = smooth_tensor(&mut rng, vec![n, c2, h, w]);
        let proj = smooth_tensor(&mut rng, vec![n, c1 + c2, h, w]);
        check(&format!("concat[{case}]"), &[a.clone(), b], &move |tape, v| {
            let y = tape.concat_channels(v[0], v[1]).unwrap();
            project(tape, y, &proj)
        });

        let flat = a.numel();
        let proj2 = smooth_tensor(&mut rng, vec![flat]);
        check(&format!("reshape[{case}]"), &[a], &move |tape, v| {
            let y = tape.reshape(v[0], vec![flat]).unwrap();
            project(tape, y, &proj2)
        });
    }
}

#[test]
fn dense_layer() {
    let mut rng = Rng::new(104);
    for case in 0..5 {
        let (n, din, dout) = (rng.int_in(1, 3), rng.int_in(2, 5), rng.int_in(2, 4));
        let x = smooth_tensor(&mut rng, vec![n, din]);
        let w = smooth_tensor(&mut rng, vec![dout, din]);
        let b = smooth_tensor(&mut rng, vec![dout]);
        let proj = smooth_tensor(&mut rng, vec![n, dout]);
        check(&format!("dense[{case}]"), &[x, w, b], &move |tape, v| {
            let y = tape.dense(v[0], v[1], v[2]).unwrap();
            project(tape, y, &proj)
        });
    }
}

#[test]
fn conv2d_all_inputs() {
    let mut rng = Rng::new(105);
    let cases = [
        // (cin, cout, k, stride, padding, h, w)
        (1, 2, 3, 1, 1, 5, 5),
        (2, 1, 3, 2, 1, 6, 5),
        (3, 2, 1, 1, 0, 4, 4),
        (2, 2, 3, 1, 0, 5, 6),
        (1, 3, 5, 2, 2, 7, 7),
    ];
    for (i, &(cin, cout, k, stride, padding, h, w)) in cases.iter().enumerate() {
        let n = rng.int_in(1, 2);
        let x = smooth_tensor(&mut rng, vec![n, cin, h, w]);
        let wt = smooth_tensor(&mut rng, vec![cout, cin, k, k]);
        let b = smooth_tensor(&mut rng, vec![cout]);
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;
        let proj = smooth_tensor(&mut rng, vec![n, cout, ho, wo]);
        check(&format!("conv2d[{i}]"), &[x, wt, b], &move |tape, v| {
            let y = tape.conv2d(v[0], v[1], v[2], stride, padding).unwrap();
            project(tape, y, &proj)
        });
    }
}

#[test]
fn conv2d_transposed_all_inputs() {
    let mut rng = Rng::new(106);
    let cases = [
        // (cin, cout, k, stride, padding, h, w)
        (1, 2, 2, 2, 0, 3, 3),
        (2, 1, 3, 1, 1, 4, 4),
        (2, 2, 2, 2, 0, 3, 4),
        (1, 1, 3, 2, 1, 4, 3),
        (3, 2, 1, 1, 0, 3, 3),
    ];
    for (i, &(cin, cout, k, stride, padding, h, w)) in cases.iter().enumerate() {
        let n = rng.int_in(1, 2);
        let x = smooth_tensor(&mut rng, vec![n, cin, h, w]);
        let wt = smooth_tensor(&mut rng, vec![cin, cout, k, k]);
        let b = smooth_tensor(&mut rng, vec![cout]);
        let ho = (h - 1) * stride + k - 2 * padding;
        let wo = (w - 1) * stride + k - 2 * padding;
        let proj = smooth_tensor(&mut rng, vec![n, cout, ho, wo]);
        check(&format!("conv2d_transposed[{i}]"), &[x, wt, b], &move |tape, v| {
            let y = tape
                .conv2d_transposed(v[0], v[1], v[2], stride, padding)
                .unwrap();
            project(tape, y, &proj)
        });
    }
}

#[test]
fn batch_norm_both_modes() {
    let mut rng = Rng::new(107);
    for case in 0..5 {
        let (n, c, h, w) = (2, rng.int_in(1, 3), rng.int_in(2, 4), rng.int_in(2, 4));
        let x = smooth_tensor(&mut rng, vec![n, c, h, w]);
        let gamma = positive_tensor(&mut rng, vec![c]);
        let beta = smooth_tensor(&mut rng, vec![c]);
        let proj = smooth_tensor(&mut rng, vec![n, c, h, w]);

        let p2 = proj.clone();
        check(
            &format!("batch_norm_train[{case}]"),
            &[x.clone(), gamma.clone(), beta.clone()],
            &move |tape, v| {
                let mut stats = RunningStats::identity(tape.shape(v[0])[1]);
                let y = tape
                    .batch_norm(v[0], v[1], v[2], &mut stats, BnMode::Train)
                    .unwrap();
                project(tape, y, &p2)
            },
        );

        let mean = smooth_tensor(&mut rng, vec![c]);
        let var = positive_tensor(&mut rng, vec![c]);
        check(
            &format!("batch_norm_eval[{case}]"),
            &[x, gamma, beta],
            &move |tape, v| {
                let mut stats = RunningStats {
                    mean: mean.data().to_vec(),
                    var: var.data().to_vec(),
                };
                let y = tape
                    .batch_norm(v[0], v[1], v[2], &mut stats, BnMode::Eval)
                    .unwrap();
                project(tape, y, &proj)
            },
        );
    }
}

#[test]
fn channel_dropout_with_fixed_mask() {
    let mut rng = Rng::new(108);
    for case in 0..5 {
        let (n, c, h, w) = (2, rng.int_in(2, 4), rng.int_in(2, 3), rng.int_in(2, 3));
        let x = smooth_tensor(&mut rng, vec![n, c, h, w]);
        let proj = smooth_tensor(&mut rng, vec![n, c, h, w]);
        let mask_seed = 2000 + case as u64;
        check(&format!("channel_dropout[{case}]"), &[x], &move |tape, v| {
            // Same seed per evaluation: identical mask across FD probes.
            let mut mask_rng = Rng::new(mask_seed);
            let y = tape.channel_dropout(v[0], 0.4, &mut mask_rng).unwrap();
            project(tape, y, &proj)
        });
    }
}

#[test]
fn tversky_loss_gradient_wrt_probabilities() {
    let mut rng = Rng::new(109);
    for case in 0..5 {
        let shape = vec![rng.int_in(3, 6), rng.int_in(3, 6)];
        let p = probability_tensor(&mut rng, shape.clone());
        let g = binary_tensor(&mut rng, shape.clone());
        let alpha = rng.range(0.05, 0.95);
        check(&format!("tversky_loss[{case}]"), &[p], &move |tape, v| {
            let gv = tape.constant(g.clone());
            let params = TverskyParams::new(alpha).unwrap();
            tversky_loss(tape, v[0], gv, &params, 1.0).unwrap()
        });
    }
}

#[test]
fn dice_ce_loss_gradient_wrt_probabilities() {
    let mut rng = Rng::new(110);
    for case in 0..5 {
        let shape = vec![rng.int_in(3, 6), rng.int_in(3, 6)];
        let p = probability_tensor(&mut rng, shape.clone());
        let g = binary_tensor(&mut rng, shape.clone());
        let g2 = g.clone();
        check(&format!("dice_ce[{case}]"), &[p.clone()], &move |tape, v| {
            let gv = tape.constant(g2.clone());
            dice_ce_loss(tape, v[0], gv, &LossConfig::default()).unwrap()
        });
        check(&format!("bce[{case}]"), &[p], &move |tape, v| {
            let gv = tape.constant(g.clone());
            binary_cross_entropy(tape, v[0], gv).unwrap()
        });
    }
}

#[test]
fn composite_graph_gradient() {
    // A conv -> bn -> prelu -> sigmoid -> tversky pipeline: the chain rule
    // across op boundaries, not just per-op rules.
    let mut rng = Rng::new(111);
    for case in 0..3 {
        let x = smooth_tensor(&mut rng, vec![1, 2, 4, 4]);
        let w = smooth_tensor(&mut rng, vec![2, 2, 3, 3]);
        let b = smooth_tensor(&mut rng, vec![2]);
        let gamma = positive_tensor(&mut rng, vec![2]);
        let beta = smooth_tensor(&mut rng, vec![2]);
        let slope = positive_tensor(&mut rng, vec![2]);
        let target = binary_tensor(&mut rng, vec![1, 2, 4, 4]);
        check(
            &format!("composite[{case}]"),
            &[x, w, b, gamma, beta, slope],
            &move |tape, v| {
                let mut stats = RunningStats::identity(2);
                let y = tape.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
                let y = tape
                    .batch_norm(y, v[3], v[4], &mut stats, BnMode::Train)
                    .unwrap();
                let y = tape.prelu(y, v[5]).unwrap();
                let p = tape.sigmoid(y);
                let gv = tape.constant(target.clone());
                tversky_loss(tape, p, gv, &TverskyParams::new(0.3).unwrap(), 1.0).unwrap()
            },
        );
    }
}

#[test]
fn conv_adjoint_identity() {
    // <conv2d(x), y> == <x, conv2d_transposed(y)> with shared weights and
    // zero bias, to 1e-10.
    let mut rng = Rng::new(112);
    for &(cin, cout, k, stride, padding, h, w) in &[
        (1usize, 2usize, 3usize, 1usize, 1usize, 5usize, 5usize),
        (2, 3, 3, 2, 1, 7, 7),
        (3, 1, 1, 1, 0, 4, 6),
        (2, 2, 3, 1, 0, 6, 5),
    ] {
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;
        let x = smooth_tensor(&mut rng, vec![1, cin, h, w]);
        let y = smooth_tensor(&mut rng, vec![1, cout, ho, wo]);
        let weights = smooth_tensor(&mut rng, vec![cout, cin, k, k]);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let wv = tape.constant(weights.clone());
        let zero_out = tape.constant(Tensor::zeros(vec![cout]));
        let zero_in = tape.constant(Tensor::zeros(vec![cin]));
        let ax = tape.conv2d(xv, wv, zero_out, stride, padding).unwrap();
        let aty = tape
            .conv2d_transposed(yv, wv, zero_in, stride, padding)
            .unwrap();
        // Transposed output may exceed the original H x W when the conv
        // stride does not tile exactly; these cases are chosen so it does.
        assert_eq!(tape.shape(aty), &[1, cin, h, w]);
        let lhs: f64 = tape
            .value(ax)
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = tape
            .value(aty)
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!(
            (lhs - rhs).abs() < 1e-10,
            "adjoint identity violated: {lhs} vs {rhs}"
        );
    }
}
