//! Multi-class evaluation: accuracy, macro-F1, one-vs-rest AUC and the
//! confusion matrix.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};

/// Evaluation summary for one model on one dataset.
///
/// `per_class_f1[c]` is 0 for classes absent from the ground truth; such
/// classes are excluded from `macro_f1`. Classes lacking either positives or
/// negatives are skipped by the AUC and listed in `skipped_auc_classes`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub ovr_auc: f64,
    /// `confusion[truth][prediction]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub per_class_f1: Vec<f64>,
    pub skipped_auc_classes: Vec<usize>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Column order of [`Self::to_csv_row`].
    pub fn csv_header() -> &'static str {
        "accuracy,macro_f1,ovr_auc"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6}",
            self.accuracy, self.macro_f1, self.ovr_auc
        )
    }
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument(
            "accuracy of an empty prediction set is undefined".into(),
        ));
    }
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Per-class F1 scores over `num_classes` classes; 0 where precision and
/// recall are both unavailable (and for classes absent from the truths).
pub fn per_class_f1(
    predictions: &[usize],
    truths: &[usize],
    num_classes: usize,
) -> Result<Vec<f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class id {} out of range for {num_classes} classes",
                p.max(t)
            )));
        }
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            let precision = if tp[c] + fp[c] > 0 {
                tp[c] as f64 / (tp[c] + fp[c]) as f64
            } else {
                0.0
            };
            let recall = if tp[c] + fn_[c] > 0 {
                tp[c] as f64 / (tp[c] + fn_[c]) as f64
            } else {
                0.0
            };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect())
}

/// Macro-averaged F1 over the classes that appear in the truths.
pub fn macro_f1(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<f64> {
    let f1 = per_class_f1(predictions, truths, num_classes)?;
    let mut present = vec![false; num_classes];
    for &t in truths {
        present[t] = true;
    }
    let scores: Vec<f64> = (0..num_classes)
        .filter(|&c| present[c])
        .map(|c| f1[c])
        .collect();
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Binary AUC of one score column via the Mann-Whitney rank statistic with
/// midranks for ties: `(R+ - n+(n+ + 1)/2) / (n+ n-)`.
fn rank_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = n as f64 - n_pos;
    let rank_sum: f64 = (0..n).filter(|&i| positive[i]).map(|i| ranks[i]).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Macro one-vs-rest AUC plus the classes skipped for lacking positives or
/// negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct OvrAuc {
    pub value: f64,
    pub skipped_classes: Vec<usize>,
}

/// One-vs-rest AUC averaged over eligible classes.
///
/// Callers are expected to pass probability rows (each summing to 1); the
/// statistic itself only uses the per-column score ranking, so any strictly
/// monotone transform of a column leaves its AUC unchanged. Errors when no
/// class has both positives and negatives.
pub fn ovr_auc(scores: ArrayView2<f64>, truths: &[usize], num_classes: usize) -> Result<OvrAuc> {
    let (m, cols) = scores.dim();
    if truths.len() != m {
        return Err(Error::InvalidArgument(format!(
            "{} truths vs {m} score rows",
            truths.len()
        )));
    }
    if cols != num_classes {
        return Err(Error::InvalidArgument(format!(
            "{cols} score columns vs {num_classes} classes"
        )));
    }
    if let Some(&bad) = truths.iter().find(|&&t| t >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let mut total = 0.0;
    let mut eligible = 0usize;
    let mut skipped = Vec::new();
    for c in 0..num_classes {
        let positive: Vec<bool> = truths.iter().map(|&t| t == c).collect();
        let n_pos = positive.iter().filter(|&&p| p).count();
        if n_pos == 0 || n_pos == m {
            skipped.push(c);
            continue;
        }
        let column: Vec<f64> = scores.column(c).to_vec();
        total += rank_auc(&column, &positive);
        eligible += 1;
    }
    if eligible == 0 {
        return Err(Error::InvalidArgument(
            "no class has both positive and negative samples".into(),
        ));
    }
    Ok(OvrAuc {
        value: total / eligible as f64,
        skipped_classes: skipped,
    })
}

/// `confusion[truth][prediction]` counts.
pub fn confusion_matrix(
    predictions: &[usize],
    truths: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class id {} out of range for {num_classes} classes",
                p.max(t)
            )));
        }
        confusion[t][p] += 1;
    }
    Ok(confusion)
}

/// Index of the row maximum, ties broken by the lowest class id.
pub fn argmax_tie_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Builds the full report from score rows (argmax predictions, tie to the
/// lowest class id) and ground-truth labels.
pub fn report_from_scores(
    scores: ArrayView2<f64>,
    truths: &[usize],
    num_classes: usize,
) -> Result<MetricsReport> {
    let predictions: Vec<usize> = scores
        .rows()
        .into_iter()
        .map(|row| argmax_tie_lowest(row.as_slice().expect("contiguous score rows")))
        .collect();
    let auc = ovr_auc(scores, truths, num_classes)?;
    Ok(MetricsReport {
        accuracy: accuracy(&predictions, truths)?,
        macro_f1: macro_f1(&predictions, truths, num_classes)?,
        ovr_auc: auc.value,
        confusion: confusion_matrix(&predictions, truths, num_classes)?,
        per_class_f1: per_class_f1(&predictions, truths, num_classes)?,
        skipped_auc_classes: auc.skipped_classes,
    })
}
