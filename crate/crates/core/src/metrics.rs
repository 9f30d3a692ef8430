//! Confusion matrices and classification reports.
//!
//! Every class is scored one-vs-rest. A ratio with a zero denominator is
//! reported as 0.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions for {truth} labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("label {label} outside the {classes} known classes")]
    UnknownLabel { label: usize, classes: usize },
    #[error("no samples to score")]
    Empty,
    #[error("confusion matrix must be {0}×{0}")]
    NotSquare(usize),
}

type Result<T> = std::result::Result<T, MetricsError>;

/// Counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts<S: AsRef<str>>(classes: &[S], counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = classes.len();
        if counts.len() != c || counts.iter().any(|row| row.len() != c) {
            return Err(MetricsError::NotSquare(c));
        }
        Ok(ConfusionMatrix { classes: classes.iter().map(|s| s.as_ref().to_string()).collect(), counts })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion<S: AsRef<str>>(preds: &[usize], truth: &[usize], classes: &[S]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), truth: truth.len() });
    }
    let c = classes.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&p, &t) in preds.iter().zip(truth) {
        if let Some(&label) = [p, t].iter().find(|&&l| l >= c) {
            return Err(MetricsError::UnknownLabel { label, classes: c });
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(classes, counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.num_classes())
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let precision = ratio(tp, cm.predicted(c) as f64);
            let recall = ratio(tp, cm.support(c) as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassMetrics { precision, recall, f1, support: cm.support(c) }
        })
        .collect()
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(MetricsError::Empty),
        n => Ok(cm.correct() as f64 / n as f64),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    Macro,
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Average {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn aggregate(per_class: &[ClassMetrics], mode: Averaging) -> Result<Average> {
    let total: u64 = per_class.iter().map(|m| m.support).sum();
    if per_class.is_empty() || total == 0 {
        return Err(MetricsError::Empty);
    }
    let weight = |m: &ClassMetrics| match mode {
        Averaging::Macro => 1.0 / per_class.len() as f64,
        Averaging::Weighted => m.support as f64 / total as f64,
    };
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| weight(m) * f(m)).sum();
    Ok(Average { precision: mean(|m| m.precision), recall: mean(|m| m.recall), f1: mean(|m| m.f1) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Average,
    pub weighted_avg: Average,
    pub total: u64,
}

impl ClassificationReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        let per_class = class_metrics(&cm);
        Ok(ClassificationReport {
            classes: cm.classes.clone(),
            accuracy: accuracy(&cm)?,
            macro_avg: aggregate(&per_class, Averaging::Macro)?,
            weighted_avg: aggregate(&per_class, Averaging::Weighted)?,
            total: cm.total(),
            per_class,
            confusion: cm,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn report<S: AsRef<str>>(preds: &[usize], truth: &[usize], classes: &[S]) -> Result<ClassificationReport> {
    ClassificationReport::from_confusion(confusion(preds, truth, classes)?)
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.classes.iter().map(String::len).chain([12]).max().unwrap_or(12);
        let mut out = String::new();
        writeln!(out, "{:>width$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support")?;
        writeln!(out)?;
        for (name, m) in self.classes.iter().zip(&self.per_class) {
            writeln!(out, "{name:>width$} {:>9.4} {:>9.4} {:>9.4} {:>9}", m.precision, m.recall, m.f1, m.support)?;
        }
        writeln!(out)?;
        writeln!(out, "{:>width$} {:>9} {:>9} {:>9.4} {:>9}", "accuracy", "", "", self.accuracy, self.total)?;
        for (label, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            writeln!(out, "{label:>width$} {:>9.4} {:>9.4} {:>9.4} {:>9}", a.precision, a.recall, a.f1, self.total)?;
        }
        f.write_str(&out)
    }
}
