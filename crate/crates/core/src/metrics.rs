//! Evaluation: confusion-count metrics, ROC analysis, threshold sweeps, and
//! probability-quality measures against known ground-truth maps.
//!
//! Aggregation comes in two clearly separated flavors: `micro` sums
//! confusion counts (and pools pixels) over the whole set before computing
//! ratios, `per_sample_mean` averages per-sample metrics. Both are reported.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{LabelMap, ProbabilityMap};
use crate::infer::threshold_map;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics: shapes {0}x{1} and {2}x{3} differ")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("metrics: empty sample set")]
    EmptySet,
    #[error("metrics: bad threshold grid: {0}")]
    BadGrid(String),
}

/// Hard-decision confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    /// 2TP / (2TP + FP + FN); defined as 1 when both maps are empty.
    pub fn dice(&self) -> f64 {
        let den = 2 * self.true_pos + self.false_pos + self.false_neg;
        if den == 0 {
            1.0
        } else {
            2.0 * self.true_pos as f64 / den as f64
        }
    }

    /// TP / (TP + FP); an empty prediction is vacuously precise only when
    /// there was nothing to find.
    pub fn precision(&self) -> f64 {
        if self.true_pos + self.false_pos == 0 {
            return if self.false_neg == 0 { 1.0 } else { 0.0 };
        }
        self.true_pos as f64 / (self.true_pos + self.false_pos) as f64
    }

    /// TP / (TP + FN); 1 when there are no positives to recall.
    pub fn recall(&self) -> f64 {
        if self.true_pos + self.false_neg == 0 {
            return 1.0;
        }
        self.true_pos as f64 / (self.true_pos + self.false_neg) as f64
    }

    /// TN / (TN + FP); 1 when there are no negatives.
    pub fn true_negative_rate(&self) -> f64 {
        if self.true_neg + self.false_pos == 0 {
            return 1.0;
        }
        self.true_neg as f64 / (self.true_neg + self.false_pos) as f64
    }

    /// (TPR + TNR) / 2.
    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.recall() + self.true_negative_rate())
    }

    pub fn false_positive_rate(&self) -> f64 {
        1.0 - self.true_negative_rate()
    }
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap) -> Result<ConfusionCounts, MetricsError> {
    if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
        return Err(MetricsError::ShapeMismatch(
            pred.rows(),
            pred.cols(),
            truth.rows(),
            truth.cols(),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_pos += 1,
            (0, 1) => c.false_neg += 1,
            _ => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// The fixed evaluation grid: 0.00, 0.05, ..., 1.00.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) * 0.05).collect()
}

/// Threshold grid used for the Table-style headline numbers.
pub const REPORT_TAU: f64 = 0.5;

/// (FPR, TPR) per grid threshold, sorted from (0, 0) to (1, 1). `None` when
/// the truth has no positives or no negatives.
pub fn roc_points(
    p: &ProbabilityMap,
    truth: &LabelMap,
    taus: &[f64],
) -> Result<Option<Vec<(f64, f64)>>, MetricsError> {
    pooled_roc_points(&[(p, truth)], taus)
}

/// ROC points over the pooled pixels of several (map, truth) pairs.
pub fn pooled_roc_points(
    pairs: &[(&ProbabilityMap, &LabelMap)],
    taus: &[f64],
) -> Result<Option<Vec<(f64, f64)>>, MetricsError> {
    if taus.is_empty() {
        return Err(MetricsError::BadGrid("empty tau grid".into()));
    }
    let mut n_pos = 0u64;
    let mut n_neg = 0u64;
    for (p, truth) in pairs {
        if p.rows() != truth.rows() || p.cols() != truth.cols() {
            return Err(MetricsError::ShapeMismatch(
                p.rows(),
                p.cols(),
                truth.rows(),
                truth.cols(),
            ));
        }
        for &t in truth.data() {
            if t == 1 {
                n_pos += 1;
            } else {
                n_neg += 1;
            }
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut sorted_taus = taus.to_vec();
    sorted_taus.sort_by(|a, b| b.partial_cmp(a).expect("finite taus"));
    let mut points = vec![(0.0, 0.0)];
    for &tau in &sorted_taus {
        let mut tp = 0u64;
        let mut fp = 0u64;
        for (p, truth) in pairs {
            for (&v, &t) in p.data().iter().zip(truth.data()) {
                if v >= tau {
                    if t == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    points.push((1.0, 1.0));
    Ok(Some(points))
}

/// Trapezoid area under a curve sorted by x.
pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

/// Grid-threshold ROC AUC (the reported number).
pub fn roc_auc(
    p: &ProbabilityMap,
    truth: &LabelMap,
    taus: &[f64],
) -> Result<Option<f64>, MetricsError> {
    Ok(roc_points(p, truth, taus)?.map(|pts| trapezoid_auc(&pts)))
}

/// Exact rank-statistic AUC with midrank tie handling; the oracle the grid
/// version is checked against, and invariant under strictly monotone
/// transforms of the probabilities.
pub fn roc_auc_exact(p: &ProbabilityMap, truth: &LabelMap) -> Option<f64> {
    let mut items: Vec<(f64, bool)> = p
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&v, &t)| (v, t == 1))
        .collect();
    let n_pos = items.iter().filter(|(_, t)| *t).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    items.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite probabilities"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j < items.len() && items[j].0 == items[i].0 {
            j += 1;
        }
        // Ranks are 1-based; tied values share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &items[i..j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Dice at each threshold of the grid.
pub fn dice_threshold_sweep(
    p: &ProbabilityMap,
    truth: &LabelMap,
    taus: &[f64],
) -> Result<Vec<(f64, f64)>, MetricsError> {
    taus.iter()
        .map(|&tau| {
            let pred = threshold_map(p, tau)
                .map_err(|e| MetricsError::BadGrid(e.to_string()))?;
            Ok((tau, confusion(&pred, truth)?.dice()))
        })
        .collect()
}

/// max - min of the dice values in a sweep.
pub fn sweep_range(sweep: &[(f64, f64)]) -> f64 {
    let lo = sweep.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    let hi = sweep.iter().map(|&(_, d)| d).fold(f64::NEG_INFINITY, f64::max);
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// Probability-map quality against a known ground-truth map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbQuality {
    /// Mean absolute error.
    pub mae: f64,
    /// Mean squared error.
    pub brier: f64,
    /// Fraction of pixels with p strictly inside (0.1, 0.9) -- the
    /// non-polarized share.
    pub polarization_fraction: f64,
}

pub fn probability_quality(
    p: &ProbabilityMap,
    p_true: &ProbabilityMap,
) -> Result<ProbQuality, MetricsError> {
    if p.rows() != p_true.rows() || p.cols() != p_true.cols() {
        return Err(MetricsError::ShapeMismatch(
            p.rows(),
            p.cols(),
            p_true.rows(),
            p_true.cols(),
        ));
    }
    let n = p.data().len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut mid = 0u64;
    for (&a, &b) in p.data().iter().zip(p_true.data()) {
        let d = a - b;
        abs += d.abs();
        sq += d * d;
        if a > 0.1 && a < 0.9 {
            mid += 1;
        }
    }
    Ok(ProbQuality {
        mae: abs / n,
        brier: sq / n,
        polarization_fraction: mid as f64 / n,
    })
}

/// One validation sample ready for evaluation.
pub struct EvalSample {
    pub prob: ProbabilityMap,
    pub truth: LabelMap,
    pub p_true: Option<ProbabilityMap>,
}

/// Table-style metrics of one method over one sample set.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub roc_auc: Option<f64>,
    pub dice_vs_threshold: Vec<(f64, f64)>,
    pub prob_mae: Option<f64>,
    pub brier: Option<f64>,
    pub polarization_fraction: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AggregateReport {
    /// Counts summed / pixels pooled over the set before computing ratios.
    pub micro: MetricsReport,
    /// Per-sample metrics averaged over the set.
    pub per_sample_mean: MetricsReport,
}

/// Evaluate a method over a validation set at the standard threshold 0.5
/// plus a dice-vs-threshold sweep over `taus`.
pub fn aggregate(samples: &[EvalSample], taus: &[f64]) -> Result<AggregateReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySet);
    }

    // Micro: summed confusion counts at each threshold, pooled ROC pixels.
    let mut at_half = ConfusionCounts::default();
    let mut sweep_counts = vec![ConfusionCounts::default(); taus.len()];
    for s in samples {
        let pred = threshold_map(&s.prob, REPORT_TAU)
            .map_err(|e| MetricsError::BadGrid(e.to_string()))?;
        at_half.add(&confusion(&pred, &s.truth)?);
        for (slot, &tau) in sweep_counts.iter_mut().zip(taus) {
            let pred = threshold_map(&s.prob, tau)
                .map_err(|e| MetricsError::BadGrid(e.to_string()))?;
            slot.add(&confusion(&pred, &s.truth)?);
        }
    }
    let pairs: Vec<(&ProbabilityMap, &LabelMap)> =
        samples.iter().map(|s| (&s.prob, &s.truth)).collect();
    let pooled_auc = pooled_roc_points(&pairs, taus)?.map(|pts| trapezoid_auc(&pts));

    let with_truth: Vec<&EvalSample> = samples.iter().filter(|s| s.p_true.is_some()).collect();
    let micro_quality = if with_truth.is_empty() {
        None
    } else {
        // Pixel-pooled means over every sample that has ground truth.
        let mut abs = 0.0;
        let mut sq = 0.0;
        let mut mid = 0u64;
        let mut n = 0u64;
        for s in &with_truth {
            let q = probability_quality(&s.prob, s.p_true.as_ref().expect("filtered"))?;
            let count = s.prob.data().len() as u64;
            abs += q.mae * count as f64;
            sq += q.brier * count as f64;
            mid += (q.polarization_fraction * count as f64).round() as u64;
            n += count;
        }
        Some(ProbQuality {
            mae: abs / n as f64,
            brier: sq / n as f64,
            polarization_fraction: mid as f64 / n as f64,
        })
    };

    let micro = MetricsReport {
        dice: at_half.dice(),
        balanced_accuracy: at_half.balanced_accuracy(),
        precision: at_half.precision(),
        recall: at_half.recall(),
        roc_auc: pooled_auc,
        dice_vs_threshold: sweep_counts
            .iter()
            .zip(taus)
            .map(|(c, &tau)| (tau, c.dice()))
            .collect(),
        prob_mae: micro_quality.map(|q| q.mae),
        brier: micro_quality.map(|q| q.brier),
        polarization_fraction: micro_quality.map(|q| q.polarization_fraction),
    };

    // Per-sample means.
    let n = samples.len() as f64;
    let mut dice = 0.0;
    let mut bal = 0.0;
    let mut prec = 0.0;
    let mut rec = 0.0;
    let mut aucs = Vec::new();
    let mut sweep_mean = vec![0.0; taus.len()];
    let mut quality_acc: Option<(f64, f64, f64, f64)> = None;
    for s in samples {
        let pred = threshold_map(&s.prob, REPORT_TAU)
            .map_err(|e| MetricsError::BadGrid(e.to_string()))?;
        let c = confusion(&pred, &s.truth)?;
        dice += c.dice();
        bal += c.balanced_accuracy();
        prec += c.precision();
        rec += c.recall();
        if let Some(auc) = roc_auc(&s.prob, &s.truth, taus)? {
            aucs.push(auc);
        }
        for (acc, &tau) in sweep_mean.iter_mut().zip(taus) {
            let pred = threshold_map(&s.prob, tau)
                .map_err(|e| MetricsError::BadGrid(e.to_string()))?;
            *acc += confusion(&pred, &s.truth)?.dice();
        }
        if let Some(pt) = &s.p_true {
            let q = probability_quality(&s.prob, pt)?;
            let acc = quality_acc.get_or_insert((0.0, 0.0, 0.0, 0.0));
            acc.0 += q.mae;
            acc.1 += q.brier;
            acc.2 += q.polarization_fraction;
            acc.3 += 1.0;
        }
    }
    let per_sample_mean = MetricsReport {
        dice: dice / n,
        balanced_accuracy: bal / n,
        precision: prec / n,
        recall: rec / n,
        roc_auc: if aucs.is_empty() {
            None
        } else {
            Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
        },
        dice_vs_threshold: sweep_mean
            .iter()
            .zip(taus)
            .map(|(d, &tau)| (tau, d / n))
            .collect(),
        prob_mae: quality_acc.map(|(a, _, _, k)| a / k),
        brier: quality_acc.map(|(_, b, _, k)| b / k),
        polarization_fraction: quality_acc.map(|(_, _, p, k)| p / k),
    };

    Ok(AggregateReport {
        micro,
        per_sample_mean,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One summary row per (method, aggregation).
pub fn summary_csv(rows: &[(String, AggregateReport)]) -> String {
    let mut out = String::from(
        "method,aggregation,dice,balanced_accuracy,precision,recall,roc_auc,prob_mae,brier,polarization_fraction\n",
    );
    for (method, report) in rows {
        for (label, r) in [("micro", &report.micro), ("per_sample_mean", &report.per_sample_mean)] {
            out.push_str(&format!(
                "{method},{label},{:.6},{:.6},{:.6},{:.6},{},{},{},{}\n",
                r.dice,
                r.balanced_accuracy,
                r.precision,
                r.recall,
                opt_cell(r.roc_auc),
                opt_cell(r.prob_mae),
                opt_cell(r.brier),
                opt_cell(r.polarization_fraction),
            ));
        }
    }
    out
}

/// One row per (method, tau) from the micro sweep.
pub fn sweep_csv(rows: &[(String, AggregateReport)]) -> String {
    let mut out = String::from("method,tau,dice\n");
    for (method, report) in rows {
        for &(tau, dice) in &report.micro.dice_vs_threshold {
            out.push_str(&format!("{method},{tau:.2},{dice:.6}\n"));
        }
    }
    out
}

/// JSON mirror of the summary and sweeps, with identical values.
pub fn report_json(rows: &[(String, AggregateReport)]) -> String {
    let value: Vec<serde_json::Value> = rows
        .iter()
        .map(|(method, report)| {
            serde_json::json!({
                "method": method,
                "micro": report.micro,
                "per_sample_mean": report.per_sample_mean,
            })
        })
        .collect();
    serde_json::to_string_pretty(&value).expect("reports serialize")
}
