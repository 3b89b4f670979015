//! Shuffled-patch position prediction pretext task.

use rand::seq::{index, SliceRandom};

use crate::dsp::TokenSequence;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Real};
use crate::model::{argmax, cross_entropy, KeyMask, PeVisibility, PositionalInput};
use crate::seed;

pub const DEFAULT_KEEP_RATIO: f64 = 0.5;
pub const DEFAULT_MASK_RATIO: f64 = 0.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PretextBatch {
    pub shuffled_patches: TokenSequence,
    /// Original index of each shuffled token.
    pub position_labels: Vec<usize>,
    /// Tokens that receive the encoding of their original position.
    pub pe_visibility: PeVisibility,
    pub key_mask: KeyMask,
}

impl PretextBatch {
    pub fn n_tokens(&self) -> usize {
        self.position_labels.len()
    }

    pub fn positional_input(&self) -> PositionalInput {
        PositionalInput::from_visibility(&self.pe_visibility, &self.position_labels)
    }

    pub fn hidden_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.pe_visibility
            .0
            .iter()
            .enumerate()
            .filter(|(_, &v)| !v)
            .map(|(i, _)| i)
    }

    /// Puts the shuffled patches back in their original order.
    pub fn restore_order(&self) -> TokenSequence {
        let mut inverse = vec![0; self.n_tokens()];
        for (i, &p) in self.position_labels.iter().enumerate() {
            inverse[p] = i;
        }
        self.shuffled_patches.permuted(&inverse)
    }
}

fn subset_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

fn check_ratio(name: &str, r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::validation(format!(
            "{name} must lie in [0, 1], got {r}"
        )));
    }
    Ok(())
}

/// Shuffles the tokens, attaches the original positional encoding to
/// `round(keep_ratio·n)` of them and hides `round(mask_ratio·n)` of them as
/// keys/values.
pub fn make_pretext_batch(
    tokens: &TokenSequence,
    keep_ratio: f64,
    mask_ratio: f64,
    seed: u64,
) -> Result<PretextBatch> {
    check_ratio("keep_ratio", keep_ratio)?;
    check_ratio("mask_ratio", mask_ratio)?;
    let n = tokens.n_tokens();
    let n_keep = subset_count(keep_ratio, n);
    let n_mask = subset_count(mask_ratio, n);
    if n_mask >= n {
        return Err(Error::validation("mask_ratio leaves no visible keys"));
    }
    let mut rng = seed::rng(seed, &[seed::tag::PRETEXT]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut pe = vec![false; n];
    for i in index::sample(&mut rng, n, n_keep) {
        pe[i] = true;
    }
    let mut keys = vec![true; n];
    for i in index::sample(&mut rng, n, n_mask) {
        keys[i] = false;
    }
    Ok(PretextBatch {
        shuffled_patches: tokens.permuted(&order),
        position_labels: order,
        pe_visibility: PeVisibility(pe),
        key_mask: KeyMask(keys),
    })
}

fn check_logits<T: Real>(logits: &Mat<T>, batch: &PretextBatch) -> Result<()> {
    if logits.rows() != batch.n_tokens() {
        return Err(Error::validation(format!(
            "{} logit rows for {} tokens",
            logits.rows(),
            batch.n_tokens()
        )));
    }
    if batch.position_labels.iter().any(|&p| p >= logits.cols()) {
        return Err(Error::validation("position label outside the logit range"));
    }
    Ok(())
}

/// Mean cross-entropy over the tokens whose position was withheld.
pub fn pretext_loss<T: Real>(logits: &Mat<T>, batch: &PretextBatch) -> Result<T> {
    check_logits(logits, batch)?;
    let mut sum = T::zero();
    let mut count = 0usize;
    for i in batch.hidden_tokens() {
        sum += cross_entropy(logits.row(i), batch.position_labels[i]);
        count += 1;
    }
    if count == 0 {
        return Err(Error::validation(
            "pretext loss needs at least one hidden-position token",
        ));
    }
    Ok(sum / T::of(count as f64))
}

/// `(correct, total)` over hidden-position tokens.
pub fn pretext_hits<T: Real>(logits: &Mat<T>, batch: &PretextBatch) -> Result<(usize, usize)> {
    check_logits(logits, batch)?;
    let mut hits = 0;
    let mut total = 0;
    for i in batch.hidden_tokens() {
        total += 1;
        if argmax(logits.row(i)) == batch.position_labels[i] {
            hits += 1;
        }
    }
    Ok((hits, total))
}

/// Fraction of hidden-position tokens whose top logit is the true position;
/// 0 when no position is hidden.
pub fn pretext_accuracy<T: Real>(logits: &Mat<T>, batch: &PretextBatch) -> Result<f64> {
    let (hits, total) = pretext_hits(logits, batch)?;
    Ok(if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, p: usize) -> TokenSequence {
        TokenSequence::from_rows(n, p, (0..n * p).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn counts_follow_ratios() {
        let t = ramp(101, 3);
        let b = make_pretext_batch(&t, 0.5, 0.0, 9).unwrap();
        assert_eq!(b.pe_visibility.n_visible(), 51);
        assert_eq!(b.key_mask, KeyMask::all(101));
        let b = make_pretext_batch(&t, 0.5, 0.25, 9).unwrap();
        assert_eq!(b.key_mask.n_visible(), 101 - 25);
        let mut sorted = b.position_labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..101).collect::<Vec<_>>());
        assert_eq!(b.restore_order(), t);
    }

    #[test]
    fn full_keep_and_errors() {
        let t = ramp(10, 2);
        let b = make_pretext_batch(&t, 1.0, 0.0, 1).unwrap();
        assert_eq!(b.pe_visibility.n_visible(), 10);
        assert!(make_pretext_batch(&t, 0.5, 1.0, 1).is_err());
        assert!(make_pretext_batch(&t, 1.5, 0.0, 1).is_err());
        assert!(make_pretext_batch(&t, 0.5, -0.1, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let t = ramp(101, 3);
        let a = make_pretext_batch(&t, 0.5, 0.1, 4).unwrap();
        assert_eq!(a, make_pretext_batch(&t, 0.5, 0.1, 4).unwrap());
        assert_ne!(a, make_pretext_batch(&t, 0.5, 0.1, 5).unwrap());
    }

    #[test]
    fn four_token_figure_pattern_is_reachable() {
        // shuffled order 3,1,4,2 (1-based) with positions given for tokens 3 and 2
        let t = ramp(4, 1);
        let found = (0..10_000u64).find(|&s| {
            let b = make_pretext_batch(&t, 0.5, 0.0, s).unwrap();
            b.position_labels == [2, 0, 3, 1] && b.pe_visibility.0 == [true, false, false, true]
        });
        let s = found.expect("pattern reachable");
        let b = make_pretext_batch(&t, 0.5, 0.0, s).unwrap();
        let pos = b.positional_input();
        assert_eq!(pos.0, vec![Some(2), None, None, Some(1)]);
    }

    #[test]
    fn loss_oracles() {
        let t = ramp(4, 1);
        let b = make_pretext_batch(&t, 0.25, 0.0, 3).unwrap();
        let hidden: Vec<usize> = b.hidden_tokens().collect();
        assert_eq!(hidden.len(), 3);

        let uniform = Mat::<f64>::zeros(4, 101);
        assert!((pretext_loss(&uniform, &b).unwrap() - 101f64.ln()).abs() < 1e-12);

        let mut perfect = Mat::<f64>::zeros(4, 4);
        for i in 0..4 {
            perfect.set(i, b.position_labels[i], 50.0);
        }
        assert!(pretext_loss(&perfect, &b).unwrap() < 1e-20);
        assert_eq!(pretext_accuracy(&perfect, &b).unwrap(), 1.0);

        let vals = [
            0.3, -1.2, 0.7, 2.0, -0.4, 0.1, 0.9, -2.2, 1.4, 0.0, 0.5, -0.8, 0.2, 1.1, -0.6, 0.4,
        ];
        let random = Mat::from_vec(4, 4, vals.to_vec());
        let mut expect = 0.0;
        for &i in &hidden {
            let row = &vals[i * 4..i * 4 + 4];
            let z: f64 = row.iter().map(|v: &f64| v.exp()).sum();
            expect += -(row[b.position_labels[i]].exp() / z).ln();
        }
        expect /= 3.0;
        assert!((pretext_loss(&random, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn single_hidden_wrong_and_no_hidden() {
        let t = ramp(4, 1);
        let b = make_pretext_batch(&t, 0.75, 0.0, 0).unwrap();
        let h = b.hidden_tokens().next().unwrap();
        let mut logits = Mat::<f32>::zeros(4, 4);
        logits.set(h, (b.position_labels[h] + 1) % 4, 5.0);
        assert_eq!(pretext_accuracy(&logits, &b).unwrap(), 0.0);

        let all = make_pretext_batch(&t, 1.0, 0.0, 0).unwrap();
        assert!(pretext_loss(&logits, &all).is_err());
        assert_eq!(pretext_accuracy(&logits, &all).unwrap(), 0.0);
    }
}
