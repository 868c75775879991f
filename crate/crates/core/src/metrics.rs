//! Detection quality (malicious is the positive class) and model accuracy.

use std::fmt;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{ClassifierArch, ModelParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Tally one round: `flagged[l]` is the decision, `malicious[l]` the truth.
    pub fn tally(flagged: &[bool], malicious: &[bool]) -> Result<Self> {
        if flagged.len() != malicious.len() {
            return Err(Error::Alignment {
                what: "ground-truth labels",
                expected: flagged.len(),
                actual: malicious.len(),
            });
        }
        let mut c = Self::default();
        for (&f, &m) in flagged.iter().zip(malicious) {
            match (f, m) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// A ratio that is undefined when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Metric(pub Option<f64>);

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        Metric((den > 0).then(|| num as f64 / den as f64))
    }

    pub fn value(&self) -> Option<f64> {
        self.0
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub recall: Metric,
    pub precision: Metric,
    pub fpr: Metric,
    pub acc: Metric,
    pub f1: Metric,
}

pub fn detection_metrics(c: &ConfusionCounts) -> DetectionMetrics {
    DetectionMetrics {
        recall: Metric::ratio(c.tp, c.tp + c.fn_),
        precision: Metric::ratio(c.tp, c.tp + c.fp),
        fpr: Metric::ratio(c.fp, c.fp + c.tn),
        acc: Metric::ratio(c.tp + c.tn, c.total()),
        // Harmonic mean of precision and recall, written without the ratios
        // so it stays defined when exactly one of them is.
        f1: Metric::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Area under the ROC curve as the normalised Mann–Whitney U statistic;
/// ties count one half. Undefined without both classes.
pub fn auc(scores: &[f64], malicious: &[bool]) -> Result<Metric> {
    if scores.len() != malicious.len() {
        return Err(Error::Alignment {
            what: "AUC labels",
            expected: scores.len(),
            actual: malicious.len(),
        });
    }
    let pos = malicious.iter().filter(|&&m| m).count();
    let neg = malicious.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(Metric(None));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over ties, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if malicious[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(Metric(Some(u / (pos as f64 * neg as f64))))
}

/// Fraction of correctly classified samples.
pub fn test_accuracy(arch: &ClassifierArch, params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidParameter(
            "accuracy needs a non-empty test set".into(),
        ));
    }
    let mut correct = 0usize;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        if arch.logits(params, img)?.argmax() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Attackers over all participants.
pub fn attack_rate(attackers: usize, benign: usize) -> Result<f64> {
    let total = attackers + benign;
    if total == 0 {
        return Err(Error::InvalidParameter("no participants".into()));
    }
    Ok(attackers as f64 / total as f64)
}
