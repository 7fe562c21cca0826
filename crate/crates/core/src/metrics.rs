//! Binary classification metrics. The positive class (label 1) is
//! AI-generated.

use serde::{Deserialize, Serialize};

use crate::error::{FstError, Result};

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive scores above a random negative, ties counting
/// one half. `None` when either class is absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(FstError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FstError::NonFinite("AUC scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Midranks (1-based) over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub specificity: Option<f64>,
    /// Mean binary cross-entropy, when computed from logits.
    pub loss: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsReport {
    /// Metrics from hard predictions and optional scores for AUC.
    pub fn from_predictions(preds: &[u8], labels: &[u8], scores: Option<&[f64]>) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(FstError::Shape(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        if preds.is_empty() {
            return Err(FstError::Contract("cannot evaluate an empty split".into()));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &l) in preds.iter().zip(labels) {
            match (p, l) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 0) => tn += 1,
                (0, 1) => fn_ += 1,
                _ => return Err(FstError::Contract("labels and predictions must be 0 or 1".into())),
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        let auc = match scores {
            Some(s) => auc(s, labels)?,
            None => None,
        };
        Ok(MetricsReport {
            n: preds.len(),
            tp,
            fp,
            tn,
            fn_,
            accuracy: (tp + tn) as f64 / preds.len() as f64,
            precision,
            recall,
            f1,
            auc,
            specificity: ratio(tn, tn + fp),
            loss: None,
        })
    }

    /// Metrics from raw probabilities, thresholded at 0.5.
    pub fn from_scores(probs: &[f64], labels: &[u8]) -> Result<Self> {
        let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
        Self::from_predictions(&preds, labels, Some(probs))
    }
}
