//! Confusion matrices, one-vs-rest tallies and the diagnostic metrics
//! (accuracy, precision, recall/sensitivity, F1, misclassification rate,
//! specificity), with micro and macro aggregation.
//!
//! Ratios whose denominator is zero are `None` ("undefined"); they are never
//! replaced by zero and macro averages skip them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// `counts[true][pred]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("confusion matrix needs k >= 1".into()));
        }
        Ok(Self {
            k,
            counts: vec![0; k * k],
        })
    }

    /// Builds a matrix from `k` rows of `k` counts each.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        let mut cm = Self::zeros(k)?;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Argument(format!(
                    "row {t} has {} entries, expected {k}",
                    row.len()
                )));
            }
            cm.counts[t * k..(t + 1) * k].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.k)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// One-vs-rest tally treating class `c` as positive.
    pub fn class_tally(&self, c: usize) -> Result<ClassTally> {
        if c >= self.k {
            return Err(Error::Index(format!(
                "class {c} out of range for k = {}",
                self.k
            )));
        }
        let tp = self.get(c, c);
        let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..self.k).map(|t| self.get(t, c)).sum();
        let false_neg = row - tp;
        let false_pos = col - tp;
        Ok(ClassTally {
            tp,
            tn: self.total() - tp - false_neg - false_pos,
            fp: false_pos,
            fn_: false_neg,
        })
    }

    pub fn tallies(&self) -> Vec<ClassTally> {
        (0..self.k)
            .map(|c| self.class_tally(c).expect("c < k"))
            .collect()
    }
}

/// Counts predictions per (true, predicted) pair.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k)?;
    for (i, (&p, &t)) in preds.iter().zip(labels).enumerate() {
        if p >= k || t >= k {
            return Err(Error::Argument(format!(
                "sample {i}: label {t} / prediction {p} outside 0..{k}"
            )));
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassTally {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassTally {
    pub fn new(tp: u64, tn: u64, fn_: u64, fp: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn pooled(tallies: &[ClassTally]) -> Self {
        tallies.iter().fold(Self::default(), |a, t| Self {
            tp: a.tp + t.tp,
            tn: a.tn + t.tn,
            fp: a.fp + t.fp,
            fn_: a.fn_ + t.fn_,
        })
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1_of(pre: Option<f64>, rec: Option<f64>) -> Option<f64> {
    match (pre, rec) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    }
}

/// Per-class metrics as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub misclassification: f64,
    /// Same quantity as `recall`.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn class_metrics(t: &ClassTally) -> Result<ClassMetrics> {
    let total = t.total();
    if total == 0 {
        return Err(Error::Undefined("accuracy of an empty tally"));
    }
    let precision = ratio(t.tp, t.tp + t.fp);
    let recall = ratio(t.tp, t.tp + t.fn_);
    Ok(ClassMetrics {
        accuracy: (t.tp + t.tn) as f64 / total as f64,
        precision,
        recall,
        f1: f1_of(precision, recall),
        misclassification: (t.fp + t.fn_) as f64 / total as f64,
        sensitivity: recall,
        specificity: ratio(t.tn, t.tn + t.fp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Metrics of the pooled tallies; accuracy is trace / total.
    Micro,
    /// Unweighted mean of the defined per-class values.
    Macro,
}

/// Dataset-level metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverallMetrics {
    pub mode: Aggregation,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub misclassification: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Classes left out of each macro mean because the value was undefined:
    /// precision, recall, F1, specificity.
    pub excluded: [usize; 4],
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), skipped)
}

pub fn aggregate_macro(per_class: &[ClassMetrics]) -> Result<OverallMetrics> {
    if per_class.is_empty() {
        return Err(Error::Argument("nothing to aggregate".into()));
    }
    let (accuracy, _) = mean_defined(per_class.iter().map(|m| Some(m.accuracy)));
    let (misclassification, _) = mean_defined(per_class.iter().map(|m| Some(m.misclassification)));
    let (precision, ep) = mean_defined(per_class.iter().map(|m| m.precision));
    let (recall, er) = mean_defined(per_class.iter().map(|m| m.recall));
    let (f1, ef) = mean_defined(per_class.iter().map(|m| m.f1));
    let (specificity, es) = mean_defined(per_class.iter().map(|m| m.specificity));
    Ok(OverallMetrics {
        mode: Aggregation::Macro,
        accuracy,
        precision,
        recall,
        f1,
        misclassification,
        sensitivity: recall,
        specificity,
        excluded: [ep, er, ef, es],
    })
}

pub fn aggregate_micro(cm: &ConfusionMatrix) -> Result<OverallMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Undefined("accuracy of an empty confusion matrix"));
    }
    let pooled = ClassTally::pooled(&cm.tallies());
    let precision = ratio(pooled.tp, pooled.tp + pooled.fp);
    let recall = ratio(pooled.tp, pooled.tp + pooled.fn_);
    let trace = cm.trace();
    Ok(OverallMetrics {
        mode: Aggregation::Micro,
        accuracy: ratio(trace, total),
        precision,
        recall,
        f1: f1_of(precision, recall),
        misclassification: ratio(total - trace, total),
        sensitivity: recall,
        specificity: ratio(pooled.tn, pooled.tn + pooled.fp),
        excluded: [0; 4],
    })
}

/// Per-class metrics of a tally list, aggregated in `mode`. Micro mode needs
/// the matrix; macro uses only the per-class values.
pub fn aggregate(cm: &ConfusionMatrix, mode: Aggregation) -> Result<OverallMetrics> {
    match mode {
        Aggregation::Micro => aggregate_micro(cm),
        Aggregation::Macro => {
            let per_class = cm
                .tallies()
                .iter()
                .map(class_metrics)
                .collect::<Result<Vec<_>>>()?;
            aggregate_macro(&per_class)
        }
    }
}
