//! The varying Tversky loss family, its Dice specialization, and the
//! Dice-cross-entropy baseline.
//!
//! The Tversky index generalizes Dice by weighting false positives with
//! `alpha` and false negatives with `beta`. Constraining `beta = 1 - alpha`
//! keeps the index in [0, 1] on the Dice scale and turns `alpha` into a
//! single under-/over-segmentation control: `alpha > beta` tolerates missed
//! foreground (undersegmentation), `alpha < beta` tolerates spill-over
//! (oversegmentation), and a prediction that matches the annotation scores
//! the same loss for every `alpha`.

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Tape, TensorError, Var};

/// Sampling margin for the loss hyperparameter: alpha is drawn uniformly
/// from [EPSILON, 1 - EPSILON] so neither error term fully vanishes.
pub const SAMPLING_EPSILON: f64 = 0.05;

/// Tolerance on the `beta == 1 - alpha` constraint.
const PAIR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("tversky: alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("tversky: beta {beta} is not 1 - alpha for alpha {alpha}")]
    UnbalancedPair { alpha: f64, beta: f64 },
    #[error("loss config: smoothing term {0} must be positive")]
    NonPositiveSmooth(f64),
    #[error("loss config: dice/cross-entropy mix {0} outside [0, 1]")]
    MixOutOfRange(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The loss hyperparameter pair h = (alpha, beta) with beta = 1 - alpha.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TverskyParams {
    alpha: f64,
    beta: f64,
}

impl TverskyParams {
    /// Construct from alpha; beta is derived as 1 - alpha.
    pub fn new(alpha: f64) -> Result<Self, LossError> {
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(LossError::AlphaOutOfRange(alpha));
        }
        Ok(TverskyParams {
            alpha,
            beta: 1.0 - alpha,
        })
    }

    /// Construct from an explicit pair, enforcing beta = 1 - alpha.
    pub fn from_pair(alpha: f64, beta: f64) -> Result<Self, LossError> {
        let p = Self::new(alpha)?;
        if (beta - p.beta).abs() > PAIR_TOLERANCE {
            return Err(LossError::UnbalancedPair { alpha, beta });
        }
        Ok(p)
    }

    /// alpha = beta = 0.5: the Dice point.
    pub fn balanced() -> Self {
        TverskyParams {
            alpha: 0.5,
            beta: 0.5,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Draw alpha ~ U[0.05, 0.95], beta = 1 - alpha.
pub fn sample_tversky_params(rng: &mut Rng) -> TverskyParams {
    let alpha = rng.range(SAMPLING_EPSILON, 1.0 - SAMPLING_EPSILON);
    TverskyParams {
        alpha,
        beta: 1.0 - alpha,
    }
}

/// Smoothing and mixing knobs shared by the loss functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Added to numerator and denominator of the Tversky index; keeps the
    /// empty-vs-empty case at index 1 instead of 0/0.
    pub smooth: f64,
    /// Weight of the Dice term in the Dice-cross-entropy baseline.
    pub dice_ce_mix: f64,
}

impl LossConfig {
    pub fn new(smooth: f64, dice_ce_mix: f64) -> Result<Self, LossError> {
        if !(smooth > 0.0) {
            return Err(LossError::NonPositiveSmooth(smooth));
        }
        if !(0.0..=1.0).contains(&dice_ce_mix) {
            return Err(LossError::MixOutOfRange(dice_ce_mix));
        }
        Ok(LossConfig {
            smooth,
            dice_ce_mix,
        })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            smooth: 1.0,
            dice_ce_mix: 0.5,
        }
    }
}

/// Soft Tversky index (TP + s) / (TP + alpha FP + beta FN + s) with
/// TP = sum(p g), FP = sum(p (1-g)), FN = sum((1-p) g).
///
/// `p` holds predicted probabilities, `g` the binary annotation; both on the
/// tape with identical shapes. Differentiable w.r.t. `p`.
pub fn tversky_index(
    tape: &mut Tape,
    p: Var,
    g: Var,
    params: &TverskyParams,
    smooth: f64,
) -> Result<Var, LossError> {
    let pg = tape.mul(p, g)?;
    let tp = tape.sum(pg);
    let not_g = tape.one_minus(g);
    let p_not_g = tape.mul(p, not_g)?;
    let fp = tape.sum(p_not_g);
    let not_p = tape.one_minus(p);
    let not_p_g = tape.mul(not_p, g)?;
    let fn_ = tape.sum(not_p_g);

    let num = tape.add_scalar(tp, smooth);
    let a_fp = tape.mul_scalar(fp, params.alpha());
    let b_fn = tape.mul_scalar(fn_, params.beta());
    let den = tape.add(tp, a_fp)?;
    let den = tape.add(den, b_fn)?;
    let den = tape.add_scalar(den, smooth);
    Ok(tape.div(num, den)?)
}

/// Tversky loss: 1 - [`tversky_index`].
pub fn tversky_loss(
    tape: &mut Tape,
    p: Var,
    g: Var,
    params: &TverskyParams,
    smooth: f64,
) -> Result<Var, LossError> {
    let index = tversky_index(tape, p, g, params, smooth)?;
    Ok(tape.one_minus(index))
}

/// Soft Dice loss, defined as the Tversky loss at alpha = beta = 0.5 so the
/// two agree exactly, not just up to floating-point reassociation.
pub fn soft_dice_loss(tape: &mut Tape, p: Var, g: Var, smooth: f64) -> Result<Var, LossError> {
    tversky_loss(tape, p, g, &TverskyParams::balanced(), smooth)
}

/// Clamp bound applied to probabilities before the logarithms.
pub const CE_CLAMP: f64 = 1e-7;

/// Pixel-mean binary cross-entropy with clamped probabilities.
pub fn binary_cross_entropy(tape: &mut Tape, p: Var, g: Var) -> Result<Var, LossError> {
    let pc = tape.clamp(p, CE_CLAMP, 1.0 - CE_CLAMP);
    let ln_p = tape.ln(pc);
    let pos = tape.mul(g, ln_p)?;
    let not_p = tape.one_minus(pc);
    let ln_not_p = tape.ln(not_p);
    let not_g = tape.one_minus(g);
    let neg = tape.mul(not_g, ln_not_p)?;
    let both = tape.add(pos, neg)?;
    let mean = tape.mean(both);
    Ok(tape.mul_scalar(mean, -1.0))
}

/// Baseline loss: mix * soft Dice + (1 - mix) * binary cross-entropy.
pub fn dice_ce_loss(
    tape: &mut Tape,
    p: Var,
    g: Var,
    config: &LossConfig,
) -> Result<Var, LossError> {
    let dice = soft_dice_loss(tape, p, g, config.smooth)?;
    let ce = binary_cross_entropy(tape, p, g)?;
    let dice_w = tape.mul_scalar(dice, config.dice_ce_mix);
    let ce_w = tape.mul_scalar(ce, 1.0 - config.dice_ce_mix);
    Ok(tape.add(dice_w, ce_w)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn pair(tape: &mut Tape, p: &[f64], g: &[f64]) -> (Var, Var) {
        let shape = vec![p.len()];
        let pv = tape.leaf(Tensor::new(shape.clone(), p.to_vec()).unwrap(), true);
        let gv = tape.constant(Tensor::new(shape, g.to_vec()).unwrap());
        (pv, gv)
    }

    fn index_value(p: &[f64], g: &[f64], alpha: f64, smooth: f64) -> f64 {
        let mut tape = Tape::new();
        let (pv, gv) = pair(&mut tape, p, g);
        let params = TverskyParams::new(alpha).unwrap();
        let idx = tversky_index(&mut tape, pv, gv, &params, smooth).unwrap();
        tape.value(idx).item()
    }

    #[test]
    fn params_enforce_the_simplex() {
        assert!(TverskyParams::new(1.2).is_err());
        assert!(TverskyParams::new(-0.1).is_err());
        assert!(TverskyParams::from_pair(0.3, 0.7).is_ok());
        assert!(TverskyParams::from_pair(0.3, 0.6).is_err());
        let p = TverskyParams::new(0.25).unwrap();
        assert_eq!(p.beta(), 0.75);
    }

    #[test]
    fn perfect_overlap_scores_one() {
        let g = [1.0, 1.0, 0.0, 1.0, 0.0];
        let idx = index_value(&g, &g, 0.5, 1.0);
        assert!((idx - 1.0).abs() < 1e-9, "index {idx}");
    }

    #[test]
    fn hand_evaluated_index() {
        // TP = 1.0, FP = 0.0, FN = 1.0 at alpha = beta = 0.5 gives 2/3.
        let p = [0.8, 0.2, 0.0];
        let g = [1.0, 1.0, 0.0];
        let idx = index_value(&p, &g, 0.5, 1e-12);
        assert!((idx - 2.0 / 3.0).abs() < 1e-9, "index {idx}");
    }

    #[test]
    fn strict_undersegmentation_is_free_at_alpha_one() {
        // p strictly inside g: FP = 0. At alpha = 1 (beta = 0) the index is 1.
        let p = [1.0, 0.0, 0.0, 0.0];
        let g = [1.0, 1.0, 1.0, 0.0];
        let idx = index_value(&p, &g, 1.0, 1e-15);
        assert!((idx - 1.0).abs() < 1e-9, "index {idx}");
    }

    #[test]
    fn strict_oversegmentation_is_free_at_alpha_zero() {
        // p strictly contains g: FN = 0. At alpha = 0 the loss vanishes.
        let p = [1.0, 1.0, 1.0, 0.0];
        let g = [1.0, 0.0, 1.0, 0.0];
        let mut tape = Tape::new();
        let (pv, gv) = pair(&mut tape, &p, &g);
        let params = TverskyParams::new(0.0).unwrap();
        let loss = tversky_loss(&mut tape, pv, gv, &params, 1e-15).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-9);
    }

    #[test]
    fn balanced_alpha_equals_soft_dice_exactly() {
        let mut rng = Rng::new(41);
        for _ in 0..20 {
            let n = 16;
            let p: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let g: Vec<f64> = (0..n).map(|_| f64::from(rng.bernoulli(0.4))).collect();
            let mut tape = Tape::new();
            let (pv, gv) = pair(&mut tape, &p, &g);
            let tv = tversky_loss(&mut tape, pv, gv, &TverskyParams::balanced(), 1.0).unwrap();
            let dice = soft_dice_loss(&mut tape, pv, gv, 1.0).unwrap();
            assert_eq!(tape.value(tv).item(), tape.value(dice).item());
        }
    }

    #[test]
    fn empty_prediction_and_label_loss_is_zero() {
        let z = [0.0, 0.0, 0.0];
        let mut tape = Tape::new();
        let (pv, gv) = pair(&mut tape, &z, &z);
        let loss = tversky_loss(&mut tape, pv, gv, &TverskyParams::balanced(), 1.0).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-12);
    }

    #[test]
    fn matched_prediction_loss_is_alpha_invariant() {
        // Balanced (correct) segmentation is encouraged identically for
        // every alpha.
        let g = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let mut reference = None;
        for alpha in [0.0, 0.1, 0.4, 0.5, 0.8, 1.0] {
            let mut tape = Tape::new();
            let (pv, gv) = pair(&mut tape, &g, &g);
            let params = TverskyParams::new(alpha).unwrap();
            let loss = tversky_loss(&mut tape, pv, gv, &params, 1.0).unwrap();
            let v = tape.value(loss).item();
            match reference {
                None => reference = Some(v),
                Some(r) => assert!((v - r).abs() < 1e-12, "alpha {alpha}: {v} vs {r}"),
            }
        }
    }

    #[test]
    fn index_decreases_in_alpha_iff_fp_exceeds_fn() {
        // FP = 0.9, FN = 0.2: more false positive mass, so raising alpha
        // (which prices FP) lowers the index.
        let p = [0.8, 0.9, 0.0];
        let g = [1.0, 0.0, 0.0];
        let lo = index_value(&p, &g, 0.2, 1e-9);
        let hi = index_value(&p, &g, 0.8, 1e-9);
        assert!(hi < lo);
        // FP = 0.1, FN = 0.6: the ordering flips.
        let p2 = [0.4, 0.1, 0.0];
        let g2 = [1.0, 0.0, 0.0];
        let lo2 = index_value(&p2, &g2, 0.2, 1e-9);
        let hi2 = index_value(&p2, &g2, 0.8, 1e-9);
        assert!(hi2 > lo2);
    }

    #[test]
    fn loss_stays_in_unit_interval() {
        let mut rng = Rng::new(17);
        for _ in 0..200 {
            let n = 12;
            let p: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let g: Vec<f64> = (0..n).map(|_| f64::from(rng.bernoulli(0.5))).collect();
            let alpha = rng.uniform();
            let mut tape = Tape::new();
            let (pv, gv) = pair(&mut tape, &p, &g);
            let params = TverskyParams::new(alpha).unwrap();
            let loss = tversky_loss(&mut tape, pv, gv, &params, 1.0).unwrap();
            let v = tape.value(loss).item();
            assert!((0.0..1.0).contains(&v), "loss {v}");
        }
    }

    #[test]
    fn sampler_respects_margin_and_mean() {
        let mut rng = Rng::new(7);
        let n = 100_000;
        let mut min = f64::MAX;
        let mut max = f64::MIN;
        let mut sum = 0.0;
        for _ in 0..n {
            let p = sample_tversky_params(&mut rng);
            assert!((p.alpha() + p.beta() - 1.0).abs() < 1e-12);
            min = min.min(p.alpha());
            max = max.max(p.alpha());
            sum += p.alpha();
        }
        assert!(min >= SAMPLING_EPSILON);
        assert!(max <= 1.0 - SAMPLING_EPSILON);
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn sampler_is_seed_deterministic() {
        let mut a = Rng::new(123);
        let mut b = Rng::new(123);
        for _ in 0..50 {
            assert_eq!(
                sample_tversky_params(&mut a).alpha(),
                sample_tversky_params(&mut b).alpha()
            );
        }
    }

    #[test]
    fn dice_ce_perfect_prediction_is_tiny() {
        let g = [1.0, 0.0, 1.0, 0.0];
        let mut tape = Tape::new();
        let (pv, gv) = pair(&mut tape, &g, &g);
        let cfg = LossConfig::default();
        let loss = dice_ce_loss(&mut tape, pv, gv, &cfg).unwrap();
        assert!(tape.value(loss).item() < 1e-5);
    }

    #[test]
    fn dice_ce_at_half_probability_gives_ln2_ce_term() {
        let p = [0.5; 8];
        let g = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let mut tape = Tape::new();
        let (pv, gv) = pair(&mut tape, &p, &g);
        let ce = binary_cross_entropy(&mut tape, pv, gv).unwrap();
        let v = tape.value(ce).item();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12, "ce {v}");
    }

    #[test]
    fn dice_ce_mix_one_is_soft_dice() {
        let mut rng = Rng::new(5);
        let p: Vec<f64> = (0..10).map(|_| rng.uniform()).collect();
        let g: Vec<f64> = (0..10).map(|_| f64::from(rng.bernoulli(0.5))).collect();
        let mut tape = Tape::new();
        let (pv, gv) = pair(&mut tape, &p, &g);
        let cfg = LossConfig::new(1.0, 1.0).unwrap();
        let mixed = dice_ce_loss(&mut tape, pv, gv, &cfg).unwrap();
        let dice = soft_dice_loss(&mut tape, pv, gv, 1.0).unwrap();
        assert!((tape.value(mixed).item() - tape.value(dice).item()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::new(0.0, 0.5).is_err());
        assert!(LossConfig::new(1.0, 1.5).is_err());
        assert!(LossConfig::new(0.5, 0.0).is_ok());
    }
}
