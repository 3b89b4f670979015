//! Five-class confusion-matrix metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::SleepStage;

const K: usize = SleepStage::COUNT;

/// Rows are true stages, columns predicted stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; K]; K]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn add(&mut self, label: SleepStage, pred: SleepStage) {
        self.counts[label.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self
            .counts
            .iter_mut()
            .flatten()
            .zip(other.counts.iter().flatten())
        {
            *a += b;
        }
    }

    fn require_nonempty(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::validation(
                "metrics need a non-empty confusion matrix",
            )),
            n => Ok(n as f64),
        }
    }
}

pub fn confusion(preds: &[SleepStage], labels: &[SleepStage]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::validation("confusion matrix of an empty sequence"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        cm.add(l, p);
    }
    Ok(cm)
}

/// Mean recall over classes that occur in the ground truth.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let recalls: Vec<f64> = (0..K)
        .filter(|&c| cm.row_sum(c) > 0)
        .map(|c| cm.counts[c][c] as f64 / cm.row_sum(c) as f64)
        .collect();
    if recalls.is_empty() {
        return Err(Error::validation(
            "balanced accuracy needs at least one labelled class",
        ));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.require_nonempty()?;
    Ok(cm.trace() as f64 / n)
}

/// Unclamped; 0 when chance agreement is already perfect.
pub fn cohens_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.require_nonempty()?;
    let po = cm.trace() as f64 / n;
    let pe = (0..K)
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if pe >= 1.0 {
        return Ok(0.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Per-class F1 (0 when precision + recall is 0) and their unweighted mean.
pub fn f1_scores(cm: &ConfusionMatrix) -> ([f64; K], f64) {
    let mut f1 = [0.0; K];
    for (c, f) in f1.iter_mut().enumerate() {
        let tp = cm.counts[c][c] as f64;
        let (rs, cs) = (cm.row_sum(c), cm.col_sum(c));
        let prec = if cs > 0 { tp / cs as f64 } else { 0.0 };
        let rec = if rs > 0 { tp / rs as f64 } else { 0.0 };
        if prec + rec > 0.0 {
            *f = 2.0 * prec * rec / (prec + rec);
        }
    }
    let macro_f1 = f1.iter().sum::<f64>() / K as f64;
    (f1, macro_f1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "FlatReport", into = "FlatReport")]
pub struct MetricsReport {
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub kappa: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; K],
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let (per_class_f1, macro_f1) = f1_scores(cm);
        Ok(MetricsReport {
            balanced_accuracy: balanced_accuracy(cm)?,
            accuracy: accuracy(cm)?,
            kappa: cohens_kappa(cm)?,
            macro_f1,
            per_class_f1,
        })
    }

    /// Values in report-column order.
    pub fn values(&self) -> [f64; 4 + K] {
        let f = self.per_class_f1;
        [
            self.balanced_accuracy,
            self.accuracy,
            self.kappa,
            self.macro_f1,
            f[0],
            f[1],
            f[2],
            f[3],
            f[4],
        ]
    }

    pub const COLUMNS: [&'static str; 4 + K] = [
        "bal_acc", "acc", "kappa", "mf1", "f1_W", "f1_NR1", "f1_NR2", "f1_NR3", "f1_R",
    ];
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatReport {
    bal_acc: f64,
    acc: f64,
    kappa: f64,
    mf1: f64,
    #[serde(rename = "f1_W")]
    f1_w: f64,
    #[serde(rename = "f1_NR1")]
    f1_nr1: f64,
    #[serde(rename = "f1_NR2")]
    f1_nr2: f64,
    #[serde(rename = "f1_NR3")]
    f1_nr3: f64,
    #[serde(rename = "f1_R")]
    f1_r: f64,
}

impl From<MetricsReport> for FlatReport {
    fn from(m: MetricsReport) -> Self {
        let f = m.per_class_f1;
        FlatReport {
            bal_acc: m.balanced_accuracy,
            acc: m.accuracy,
            kappa: m.kappa,
            mf1: m.macro_f1,
            f1_w: f[0],
            f1_nr1: f[1],
            f1_nr2: f[2],
            f1_nr3: f[3],
            f1_r: f[4],
        }
    }
}

impl From<FlatReport> for MetricsReport {
    fn from(f: FlatReport) -> Self {
        MetricsReport {
            balanced_accuracy: f.bal_acc,
            accuracy: f.acc,
            kappa: f.kappa,
            macro_f1: f.mf1,
            per_class_f1: [f.f1_w, f.f1_nr1, f.f1_nr2, f.f1_nr3, f.f1_r],
        }
    }
}
