use crate::error::{Error, Result};
use crate::model::cross_entropy;
use crate::records::SleepStage;

/// Inverse-frequency weights `N / (K · n_c)`.
pub fn class_weights(label_counts: &[u64; SleepStage::COUNT]) -> Result<[f64; SleepStage::COUNT]> {
    if let Some(c) = label_counts.iter().position(|&n| n == 0) {
        return Err(Error::validation(format!(
            "no training examples of stage {}; merge or drop the class before weighting",
            SleepStage::ALL[c]
        )));
    }
    let total: u64 = label_counts.iter().sum();
    let k = SleepStage::COUNT as f64;
    let mut w = [0.0; SleepStage::COUNT];
    for (w, &n) in w.iter_mut().zip(label_counts) {
        *w = total as f64 / (k * n as f64);
    }
    Ok(w)
}

/// `w_label · (−log softmax(logits)[label])`.
pub fn weighted_ce(logits: &[f64], label: SleepStage, weights: &[f64; SleepStage::COUNT]) -> f64 {
    weights[label.index()] * cross_entropy(logits, label.index())
}
