use super::config::ModelConfig;
use super::encoder::{check_inputs, forward, KeyMask, Mode, PositionalInput};
use super::params::ModelParams;
use super::sinusoidal_pe;
use crate::dsp::TokenSequence;
use crate::error::{Error, Result};
use crate::linalg::{matmul, Mat, Real};

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    lse - logits[label]
}

pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn mean_rows<T: Real>(z: &Mat<T>) -> Vec<T> {
    let mut pooled = vec![T::zero(); z.cols()];
    z.add_col_sums_into(&mut pooled);
    let inv = T::one() / T::of(z.rows() as f64);
    pooled.iter_mut().for_each(|x| *x *= inv);
    pooled
}

pub(crate) fn stage_logits<T: Real>(params: &ModelParams<T>, pooled: &[T]) -> Vec<T> {
    let head = &params.stage_head;
    let mut out = head.bias.clone();
    for (i, &p) in pooled.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(head.weight.row(i)) {
            *o += p * w;
        }
    }
    out
}

pub(crate) fn position_logits<T: Real>(params: &ModelParams<T>, z: &Mat<T>) -> Mat<T> {
    let mut l = matmul(z.view(), params.position_head.weight.view());
    l.add_row_vector(&params.position_head.bias);
    l
}

/// Position logits (`n_tokens × n_positions`) for a shuffled sequence.
pub fn forward_pretext<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    shuffled: &TokenSequence,
    positions: &PositionalInput,
    key_mask: &KeyMask,
    mode: Mode,
) -> Result<Mat<T>> {
    check_inputs(
        cfg,
        shuffled.n_tokens(),
        shuffled.patch_len(),
        positions,
        key_mask,
    )?;
    let pe = sinusoidal_pe::<T>(cfg.n_tokens, cfg.d_model)?;
    let cache = forward(
        params,
        cfg,
        shuffled.as_slice(),
        positions,
        key_mask,
        &pe,
        mode,
    )?;
    let logits = position_logits(params, &cache.output);
    if !logits.is_finite() {
        return Err(Error::numerical("position_head", "non-finite logits"));
    }
    Ok(logits)
}

/// Stage logits for an ordered sequence: every token gets its own position,
/// all keys are visible, token embeddings are mean-pooled.
pub fn forward_stage<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    ordered: &TokenSequence,
    mode: Mode,
) -> Result<Vec<T>> {
    let n = cfg.n_tokens;
    let positions = PositionalInput::ordered(n);
    let key_mask = KeyMask::all(n);
    check_inputs(
        cfg,
        ordered.n_tokens(),
        ordered.patch_len(),
        &positions,
        &key_mask,
    )?;
    let pe = sinusoidal_pe::<T>(n, cfg.d_model)?;
    let cache = forward(
        params,
        cfg,
        ordered.as_slice(),
        &positions,
        &key_mask,
        &pe,
        mode,
    )?;
    let logits = stage_logits(params, &mean_rows(&cache.output));
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("stage_head", "non-finite logits"));
    }
    Ok(logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_and_ce_basics() {
        let p = softmax(&[1.0f64, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let ce = cross_entropy(&[0.0f64; 5], 2);
        assert!((ce - 5f64.ln()).abs() < 1e-15);
        let ce = cross_entropy(&[2.0f64, 0.0, 0.0, 0.0, 0.0], 0);
        let e2 = 2f64.exp();
        assert!((ce + (e2 / (e2 + 4.0)).ln()).abs() < 1e-14);
        // large logits stay finite
        assert!(cross_entropy(&[1000.0f32, -1000.0], 1).is_finite());
        assert_eq!(argmax(&[0.1f32, 0.7, 0.7, 0.2]), 1);
    }
}
