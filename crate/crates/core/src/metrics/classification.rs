use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::TurnKey;
use crate::decision::GateDecision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub fdr: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub threshold: Option<f64>,
    /// No positive predictions: precision and FDR are reported as 0.
    pub no_positive_predictions: bool,
    /// No positive labels: recall is reported as 0.
    pub no_positive_labels: bool,
    /// Only one class among the labels: AUC is reported as 0.5.
    pub auc_undefined: bool,
    pub n_evaluated: usize,
    /// Predictions whose gate output could not be read; left out of every count.
    pub n_unparsed_excluded: usize,
    /// Predictions for turns without a human label; left out of every count.
    pub n_unlabeled_excluded: usize,
}

/// Precision/recall/F1/FDR from decisions and rank-based AUC from scores.
pub fn report_from_parts(
    labels: &[bool],
    scores: &[f64],
    decisions: &[bool],
    threshold: Option<f64>,
) -> ClassificationReport {
    debug_assert!(labels.len() == scores.len() && labels.len() == decisions.len());
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&y, &d) in labels.iter().zip(decisions) {
        match (y, d) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let no_positive_predictions = tp + fp == 0;
    let no_positive_labels = tp + fn_ == 0;
    let precision = if no_positive_predictions {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if no_positive_labels {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let fdr = if no_positive_predictions {
        0.0
    } else {
        fp as f64 / (tp + fp) as f64
    };
    let auc = roc_auc(labels, scores);
    ClassificationReport {
        precision,
        recall,
        f1,
        auc: auc.unwrap_or(0.5),
        fdr,
        tp,
        fp,
        fn_,
        tn,
        threshold,
        no_positive_predictions,
        no_positive_labels,
        auc_undefined: auc.is_none(),
        n_evaluated: labels.len(),
        n_unparsed_excluded: 0,
        n_unlabeled_excluded: 0,
    }
}

/// Report for scores thresholded at `threshold` (`score >= threshold` is positive).
pub fn report_at_threshold(
    labels: &[bool],
    scores: &[f64],
    threshold: f64,
) -> ClassificationReport {
    let decisions: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    report_from_parts(labels, scores, &decisions, Some(threshold))
}

/// Area under the ROC curve via the rank-sum statistic with average ranks for ties.
/// `None` when either class is absent.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// The score threshold that maximizes F1, preferring the higher threshold on ties.
/// `None` when there are no positive labels.
pub fn best_f1_threshold(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let total_pos = labels.iter().filter(|&&y| y).count();
    if total_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<(f64, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + (total_pos - tp)) as f64;
        if best.is_none_or(|(b, _)| f1 > b) {
            best = Some((f1, s));
        }
    }
    best.map(|(_, t)| t)
}

/// Scores gate decisions against human labels.
///
/// Only turns present in both maps are counted. Unparsed decisions and
/// unlabeled turns are excluded and their counts reported.
pub fn classification_report(
    predictions: &BTreeMap<TurnKey, GateDecision>,
    labels: &BTreeMap<TurnKey, bool>,
) -> Result<ClassificationReport, MetricsError> {
    let mut ys = Vec::new();
    let mut scores = Vec::new();
    let mut decisions = Vec::new();
    let mut unparsed = 0;
    let mut unlabeled = 0;
    let mut thresholds: Vec<f64> = Vec::new();
    for (key, pred) in predictions {
        let Some(&label) = labels.get(key) else {
            unlabeled += 1;
            continue;
        };
        if pred.unparsed {
            unparsed += 1;
            continue;
        }
        ys.push(label);
        scores.push(pred.score);
        decisions.push(pred.decision);
        if let Some(t) = pred.threshold {
            if !thresholds.contains(&t) {
                thresholds.push(t);
            }
        }
    }
    if ys.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let threshold = match thresholds.as_slice() {
        [t] => Some(*t),
        _ => None,
    };
    let mut report = report_from_parts(&ys, &scores, &decisions, threshold);
    report.n_unparsed_excluded = unparsed;
    report.n_unlabeled_excluded = unlabeled;
    Ok(report)
}
