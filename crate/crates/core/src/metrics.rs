//! Classification metrics: per-class precision/recall/F1, accuracy, AUROC and
//! multilabel macro-F1.

use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Multiclass,
    Multilabel,
}

/// Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: ReportKind,
    pub num_evaluated: usize,
    pub classes: Vec<ClassMetrics>,
    pub accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub macro_f1: f64,
}

impl MetricsReport {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = ratio_or_zero(tp, tp + fp);
    let r = ratio_or_zero(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Per-class precision/recall/F1, accuracy and macro-F1 for single-label
/// predictions. Empty denominators give 0.
pub fn classification_report(
    pred: &[usize],
    truth: &[usize],
    num_classes: usize,
) -> Result<MetricsReport> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(GraceError::input(format!(
            "prediction/label lengths {} and {} must be equal and non-zero",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(i) = pred.iter().chain(truth).position(|&l| l >= num_classes) {
        let l = if i < pred.len() { pred[i] } else { truth[i - pred.len()] };
        return Err(GraceError::input(format!(
            "label {l} out of range for {num_classes} classes"
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        support[t] += 1;
        if p == t {
            tp[t] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let classes: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let (precision, recall, f1) = prf(tp[c], fp[c], fn_[c]);
            ClassMetrics {
                label: c.to_string(),
                precision,
                recall,
                f1,
                support: support[c],
            }
        })
        .collect();
    let macro_f1 = classes.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64;
    Ok(MetricsReport {
        kind: ReportKind::Multiclass,
        num_evaluated: pred.len(),
        classes,
        accuracy: Some(correct as f64 / pred.len() as f64),
        auroc: None,
        macro_f1,
    })
}

/// Area under the ROC curve via the Mann–Whitney rank statistic, ties counted
/// as one half. `None` unless both classes are present.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    if scores.len() != positive.len() {
        return None;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum over positives of (#negatives strictly below + half of tied negatives).
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos_here = group.iter().filter(|&&k| positive[k]).count();
        let neg_here = group.len() - pos_here;
        wins += pos_here as f64 * (neg_below as f64 + 0.5 * neg_here as f64);
        neg_below += neg_here;
        i = j;
    }
    Some(wins / (n_pos as f64 * n_neg as f64))
}

/// Binary report with AUROC computed from class-1 scores.
pub fn binary_report(scores: &[f64], pred: &[usize], truth: &[usize]) -> Result<MetricsReport> {
    let mut report = classification_report(pred, truth, 2)?;
    let positive: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
    report.auroc = auroc(scores, &positive);
    Ok(report)
}

/// Per-label F1 from thresholded scores plus macro-F1. `scores[i][l]` and
/// `truth[i][l]` refer to node `i`, label `l`.
pub fn multilabel_report(
    scores: &[Vec<f64>],
    truth: &[Vec<bool>],
    label_names: &[String],
    threshold: f64,
) -> Result<MetricsReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GraceError::config(format!(
            "multilabel threshold {threshold} outside (0, 1)"
        )));
    }
    let num_labels = label_names.len();
    if scores.len() != truth.len() || scores.is_empty() {
        return Err(GraceError::input("score and label row counts differ or are zero"));
    }
    if let Some(i) = (0..scores.len()).find(|&i| scores[i].len() != num_labels || truth[i].len() != num_labels) {
        return Err(GraceError::input_at(
            format!("row {i}"),
            format!("expected {num_labels} label columns"),
        ));
    }
    let mut exact = 0usize;
    let mut classes = Vec::with_capacity(num_labels);
    for (l, name) in label_names.iter().enumerate() {
        let (mut tp, mut fp, mut fn_, mut support) = (0, 0, 0, 0);
        for (s, t) in scores.iter().zip(truth) {
            let p = s[l] >= threshold;
            if t[l] {
                support += 1;
            }
            match (p, t[l]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let (precision, recall, f1) = prf(tp, fp, fn_);
        classes.push(ClassMetrics {
            label: name.clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    for (s, t) in scores.iter().zip(truth) {
        if s.iter().zip(t).all(|(&v, &y)| (v >= threshold) == y) {
            exact += 1;
        }
    }
    let macro_f1 = if num_labels == 0 {
        0.0
    } else {
        classes.iter().map(|c| c.f1).sum::<f64>() / num_labels as f64
    };
    Ok(MetricsReport {
        kind: ReportKind::Multilabel,
        num_evaluated: scores.len(),
        classes,
        accuracy: Some(exact as f64 / scores.len() as f64),
        auroc: None,
        macro_f1,
    })
}
