//! Central finite-difference gradient checking.
//!
//! The oracle only ever evaluates forward passes: it rebuilds the
//! computation at perturbed inputs and compares the symmetric difference
//! quotient against the gradients produced by [`Tape::backward`]. It shares
//! no code with the backward rules it verifies.

use super::{Tape, Tensor, Var};

/// Perturbation step for the symmetric difference quotient.
pub const FD_STEP: f64 = 1e-5;
/// Acceptance threshold on [`FdReport::max_rel_err`].
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct FdReport {
    /// Largest relative error over every coordinate of every input.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub checked: usize,
}

impl FdReport {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel_err < FD_TOLERANCE
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Compare analytic gradients of `build`'s scalar output against central
/// finite differences, for every coordinate of every input tensor.
///
/// `build` must be a pure function of the input values: any randomness
/// inside (e.g. dropout masks) has to be re-seeded identically per call.
pub fn finite_difference_check(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
) -> FdReport {
    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let loss = build(&mut tape, &vars);
    assert_eq!(tape.value(loss).numel(), 1, "gradcheck target must be scalar");
    tape.backward(loss).expect("backward failed in gradcheck");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for j in 0..tensor.numel() {
            let base = tensor.data().to_vec();
            let mut plus = base.clone();
            plus[j] += FD_STEP;
            work[ti] = Tensor::new(tensor.shape().to_vec(), plus).unwrap();
            let f_plus = eval(&work);
            let mut minus = base;
            minus[j] -= FD_STEP;
            work[ti] = Tensor::new(tensor.shape().to_vec(), minus).unwrap();
            let f_minus = eval(&work);
            work[ti] = tensor.clone();

            let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(rel_err(fd, analytic[ti][j]));
            checked += 1;
        }
    }
    FdReport {
        max_rel_err,
        checked,
    }
}
