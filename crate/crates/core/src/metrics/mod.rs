//! Threshold metrics, ranking AUCs and regression errors on fire probabilities.

mod stratified;

pub use stratified::{stratified_report, write_report_csv, Stratum, StratifiedCell, StratifiedReport, Zone};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::report::serialize_opt;

/// Probabilities at or above this value are classified as fire.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `None` when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `None` when there are no positive labels.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `None` when there are no negative labels.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    /// `2tp / (2tp + fp + fn)`; zero whenever tp = 0 and some error exists.
    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    Ok(())
}

fn is_positive(label: f64) -> bool {
    label >= 0.5
}

pub fn confusion(probs: &[f64], labels: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    check_lengths(probs.len(), labels.len())?;
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, is_positive(y)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Indices sorted by descending score; equal scores stay adjacent.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Average precision: step integration of precision over recall increments,
/// evaluating each group of tied scores as a single threshold.
pub fn pr_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| is_positive(y)).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric {
            metric: "pr_auc",
            reason: "no positive labels",
        });
    }
    let order = descending(scores);
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_tp = 0;
        while i < order.len() && scores[order[i]] == s {
            group_tp += is_positive(labels[order[i]]) as usize;
            seen += 1;
            i += 1;
        }
        tp += group_tp;
        if group_tp > 0 {
            ap += (group_tp as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Mann-Whitney statistic from average ranks, so ties count one half.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| is_positive(y)).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric {
            metric: "roc_auc",
            reason: "needs both positive and negative labels",
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| is_positive(labels[k])).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean squared and mean absolute deviation of probabilities from 0/1 labels.
pub fn regression_errors(probs: &[f64], labels: &[f64]) -> Result<(f64, f64)> {
    check_lengths(probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(Error::UndefinedMetric {
            metric: "mse",
            reason: "no samples",
        });
    }
    let n = probs.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (&p, &y) in probs.iter().zip(labels) {
        let d = p - y;
        se += d * d;
        ae += d.abs();
    }
    Ok((se / n, ae / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsBundle {
    pub n: usize,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(serialize_with = "serialize_opt")]
    pub precision: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub recall: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub f1: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub fpr: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub pr_auc: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub roc_auc: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub mse: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub mae: Option<f64>,
}

impl MetricsBundle {
    /// Everything at once. Undefined quantities are `None`, never NaN.
    pub fn compute(probs: &[f64], labels: &[f64], threshold: f64) -> Result<Self> {
        let counts = confusion(probs, labels, threshold)?;
        let errs = regression_errors(probs, labels).ok();
        Ok(MetricsBundle {
            n: probs.len(),
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            fpr: counts.fpr(),
            pr_auc: pr_auc(probs, labels).ok(),
            roc_auc: roc_auc(probs, labels).ok(),
            mse: errs.map(|e| e.0),
            mae: errs.map(|e| e.1),
        })
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            "fpr" => self.fpr,
            "pr_auc" => self.pr_auc,
            "roc_auc" => self.roc_auc,
            "mse" => self.mse,
            "mae" => self.mae,
            _ => None,
        }
    }
}
