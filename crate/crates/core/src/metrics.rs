//! Classification metrics for imbalanced multi-class data.
//!
//! Per-class precision/recall/F1 use the convention that `0/0 = 1`. Weighted
//! aggregates average per-class values by support.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("AUC needs at least two classes, got {0}")]
    DegenerateClasses(usize),
    #[error("no instances to evaluate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Support-weighted precision, recall and F1 over `classes` classes.
///
/// F1 is `2TP / (2TP + FP + FN)`, the harmonic mean of precision and recall
/// whenever that is defined; a class with no support and no predictions
/// scores 1 everywhere and carries zero weight.
pub fn weighted_prf(y_true: &[usize], y_pred: &[usize], classes: usize) -> PrfSummary {
    assert_eq!(y_true.len(), y_pred.len(), "one prediction per label");
    let mut tp = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|c| {
            let fp = predicted[c] - tp[c];
            let fn_ = support[c] - tp[c];
            ClassMetrics {
                class: c,
                support: support[c],
                predicted: predicted[c],
                true_positives: tp[c],
                precision: ratio(tp[c], predicted[c]),
                recall: ratio(tp[c], support[c]),
                f1: ratio(2 * tp[c], 2 * tp[c] + fp + fn_),
            }
        })
        .collect();
    let total: usize = support.iter().sum();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            1.0
        } else {
            per_class
                .iter()
                .map(|m| m.support as f64 * f(m))
                .sum::<f64>()
                / total as f64
        }
    };
    PrfSummary {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        per_class,
    }
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    let hits = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    ratio(hits, y_true.len())
}

/// One-vs-rest ROC AUC of a single instance: the fraction of wrong classes
/// scored below the true class, ties counting one half.
pub fn instance_auc(scores: &[f64], label: usize) -> f64 {
    let s = scores[label];
    let mut wins = 0.0;
    for (c, &v) in scores.iter().enumerate() {
        if c == label {
            continue;
        }
        if v < s {
            wins += 1.0;
        } else if v == s {
            wins += 0.5;
        }
    }
    wins / (scores.len() - 1) as f64
}

/// Mean of [`instance_auc`] over the rows of row-major `scores: [n, classes]`.
pub fn per_instance_auc(
    scores: &[f64],
    classes: usize,
    labels: &[usize],
) -> Result<f64, MetricsError> {
    if classes < 2 {
        return Err(MetricsError::DegenerateClasses(classes));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    assert_eq!(
        scores.len(),
        labels.len() * classes,
        "one score row per label"
    );
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| instance_auc(&scores[i * classes..(i + 1) * classes], y))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when there are fewer than two classes.
    pub auc: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    /// Scores `probs: [n, classes]` (row-major) against `labels`.
    pub fn compute(probs: &[f64], classes: usize, labels: &[usize]) -> Result<Self, MetricsError> {
        if labels.is_empty() {
            return Err(MetricsError::Empty);
        }
        let preds: Vec<usize> = probs.chunks(classes).map(argmax).collect();
        let prf = weighted_prf(labels, &preds, classes);
        Ok(Self {
            n: labels.len(),
            accuracy: accuracy(labels, &preds),
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            auc: per_instance_auc(probs, classes, labels).ok(),
            per_class: prf.per_class,
        })
    }

    fn write_flat(&self, prefix: &str, out: &mut String) {
        let _ = writeln!(out, "{prefix}n={}", self.n);
        let _ = writeln!(out, "{prefix}accuracy={:.6}", self.accuracy);
        let _ = writeln!(out, "{prefix}precision={:.6}", self.precision);
        let _ = writeln!(out, "{prefix}recall={:.6}", self.recall);
        let _ = writeln!(out, "{prefix}f1={:.6}", self.f1);
        match self.auc {
            Some(a) => {
                let _ = writeln!(out, "{prefix}auc={a:.6}");
            }
            None => {
                let _ = writeln!(out, "{prefix}auc=NA");
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// `ge<t>` or `lt<t>`.
    pub name: String,
    pub threshold: usize,
    pub at_least: bool,
    /// `None` when no instance falls in the bucket.
    pub report: Option<MetricsReport>,
}

/// Recomputes every metric within buckets of instances grouped by the size
/// of their true class: for each threshold `t`, classes with `>= t` members
/// and classes with `< t` members.
pub fn threshold_report(
    probs: &[f64],
    classes: usize,
    labels: &[usize],
    class_sizes: &[usize],
    thresholds: &[usize],
) -> Vec<Bucket> {
    let mut out = Vec::new();
    for &t in thresholds {
        for at_least in [true, false] {
            let keep: Vec<usize> = (0..labels.len())
                .filter(|&i| (class_sizes[labels[i]] >= t) == at_least)
                .collect();
            let sub_labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
            let sub_probs: Vec<f64> = keep
                .iter()
                .flat_map(|&i| probs[i * classes..(i + 1) * classes].iter().copied())
                .collect();
            out.push(Bucket {
                name: format!("{}{t}", if at_least { "ge" } else { "lt" }),
                threshold: t,
                at_least,
                report: MetricsReport::compute(&sub_probs, classes, &sub_labels).ok(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: String,
    pub loss: f64,
    pub overall: MetricsReport,
    pub buckets: Vec<Bucket>,
}

impl EvaluationReport {
    /// Flat `key=value` lines; per-bucket keys are prefixed with the bucket
    /// name.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split={}", self.split);
        let _ = writeln!(out, "loss={:.6}", self.loss);
        self.overall.write_flat("", &mut out);
        for b in &self.buckets {
            match &b.report {
                Some(r) => r.write_flat(&format!("{}.", b.name), &mut out),
                None => {
                    let _ = writeln!(out, "{}.n=0", b.name);
                }
            }
        }
        out
    }
}
