//! Match-classification metrics: confusion counts and F1 at a threshold,
//! precision-recall curves, average precision and recall at a target
//! precision.
//!
//! Scores at or above the threshold count as predicted matches.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        check_lengths(scores, labels)?;
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`, a single rounding.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)`, 0 when `P + R = 0`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Fraction → percent rounded to one decimal, the reporting format.
pub fn percent(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Confusion,
}

impl ThresholdMetrics {
    pub fn f1_percent(&self) -> f64 {
        percent(self.f1)
    }
}

pub fn f1_at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdMetrics> {
    let counts = Confusion::from_predictions(scores, labels, threshold)?;
    Ok(ThresholdMetrics {
        threshold,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Operating points at every distinct score, thresholds strictly
/// decreasing (so recall is non-decreasing along the list).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub positives: usize,
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(Error::NoPositiveLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, positives),
        });
    }
    Ok(PrCurve { points, positives })
}

/// Average precision: `Σ_k (R_k − R_{k−1}) · P_k`, step interpolation.
pub fn prauc(curve: &PrCurve) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in &curve.points {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    area
}

/// Largest recall among operating points with precision ≥ `target`; 0 if
/// none reaches it.
pub fn recall_at_precision(curve: &PrCurve, target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.precision >= target)
        .map(|p| p.recall)
        .fold(0.0, f64::max)
}

/// Sweeps every distinct score as a threshold and returns
/// `(threshold, f1)` with the best F1; ties go to the lower threshold.
pub fn calibrate_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::EmptyInput("calibrate_threshold needs at least one score"));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut best = (scores[order[0]], f64::NEG_INFINITY);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let counts = Confusion {
            tp,
            fp,
            fn_: positives - tp,
            tn: 0,
        };
        let f1 = counts.f1();
        if f1 >= best.1 {
            best = (threshold, f1);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub at_threshold: ThresholdMetrics,
    /// `None` when the labels contain no positives.
    pub prauc: Option<f64>,
    pub recall_at_precision_95: Option<f64>,
    pub runtime_secs: f64,
}

pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    let at_threshold = f1_at_threshold(scores, labels, threshold)?;
    let curve = match pr_curve(scores, labels) {
        Ok(c) => Some(c),
        Err(Error::NoPositiveLabels) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        at_threshold,
        prauc: curve.as_ref().map(prauc),
        recall_at_precision_95: curve.as_ref().map(|c| recall_at_precision(c, 0.95)),
        runtime_secs: 0.0,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.at_threshold;
        write!(
            f,
            "F1 {:.1}  P {:.1}  R {:.1}  @{}",
            percent(t.f1),
            percent(t.precision),
            percent(t.recall),
            t.threshold
        )?;
        if let (Some(ap), Some(r95)) = (self.prauc, self.recall_at_precision_95) {
            write!(f, "  PRAUC {:.1}  R@P95 {:.1}", percent(ap), percent(r95))?;
        }
        write!(
            f,
            "  (tp {} fp {} fn {} tn {})",
            t.counts.tp, t.counts.fp, t.counts.fn_, t.counts.tn
        )
    }
}

/// Two-column `recall,precision` CSV.
pub fn write_pr_csv(path: &Path, curve: &PrCurve) -> Result<()> {
    let mut out = String::from("recall,precision\n");
    for p in &curve.points {
        out.push_str(&format!("{},{}\n", p.recall, p.precision));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
