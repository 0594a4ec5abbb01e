//! Accuracy and per-class AUROC.
//!
//! AUROC is the Mann-Whitney statistic: the probability that a random
//! positive outscores a random negative, with ties counting one half.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub n_samples: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// One entry per class; `None` where the split holds a single label value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_auroc: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_auroc: Option<f64>,
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("accuracy"));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "accuracy: {} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Rank-based Mann-Whitney AUROC. Equal scores share their average rank.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "auroc: {} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auroc"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::AurocUndefined("no positive samples"));
    }
    if n_neg == 0 {
        return Err(Error::AurocUndefined("no negative samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, so that averaged ranks stay integral.
    let mut rank_sum2: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) average to (start + 1 + end) / 2.
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        rank_sum2 += pos_in_group * (start + 1 + end) as u64;
        start = end;
    }
    let (np, nn) = (n_pos as u64, n_neg as u64);
    // 2U = 2R - np(np + 1); U counts concordant pairs plus half the ties.
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / 2.0 / (np * nn) as f64)
}

/// Mean over classes whose AUROC is defined.
pub fn mean_auroc(per_class: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = per_class.iter().filter_map(|v| *v).collect();
    if present.is_empty() {
        return Err(Error::AurocUndefined("no class has a defined AUROC"));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// One-vs-rest ROC curve points `(threshold, fpr, tpr)`, thresholds descending.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, f64)> {
    let n_pos = labels.iter().filter(|&&l| l).count().max(1) as f64;
    let n_neg = labels.iter().filter(|&&l| !l).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if labels[order[k]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        points.push((threshold, fp / n_neg, tp / n_pos));
    }
    points
}
