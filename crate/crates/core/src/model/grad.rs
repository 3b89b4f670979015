//! Batch loss and analytic gradients.
//!
//! Samples are grouped into fixed-size chunks; each chunk accumulates its
//! samples in order and chunk partials are summed in chunk order. The result
//! therefore does not depend on the execution mode or thread count.

use super::config::ModelConfig;
use super::encoder::{backward, check_inputs, forward, KeyMask, Mode, PositionalInput};
use super::heads::{cross_entropy, mean_rows, position_logits, softmax, stage_logits};
use super::params::ModelParams;
use super::sinusoidal_pe;
use crate::dsp::TokenSequence;
use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul, Mat, Real};
use crate::mp3::PretextBatch;
use crate::parallel::{self, Execution};
use crate::records::SleepStage;
use crate::seed;

/// Samples per reduction chunk.
pub const GRAD_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct StageExample<'a> {
    pub tokens: &'a TokenSequence,
    pub label: SleepStage,
}

/// A mini-batch together with the objective it is scored under.
#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    /// Position prediction over hidden-position tokens.
    Pretext(&'a [PretextBatch]),
    /// Class-weighted sleep-stage cross-entropy.
    Stage {
        examples: &'a [StageExample<'a>],
        class_weights: [f64; 5],
    },
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Pretext(b) => b.len(),
            Batch::Stage { examples, .. } => examples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default, Clone, Copy, Debug)]
pub struct GradOptions {
    /// Dropout seed; `None` evaluates deterministically without dropout.
    pub dropout_seed: Option<u64>,
    pub execution: Execution,
}

fn sample_mode(opts: &GradOptions, index: usize) -> Mode {
    match opts.dropout_seed {
        Some(s) => Mode::Train {
            seed: seed::derive(s, &[index as u64]),
        },
        None => Mode::Eval,
    }
}

/// Adds `inv_batch`-scaled gradients for one pretext sample; returns its loss.
fn pretext_sample<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    pe: &Mat<T>,
    sample: &PretextBatch,
    mode: Mode,
    inv_batch: T,
    grad: &mut ModelParams<T>,
) -> Result<T> {
    let positions = sample.positional_input();
    let tokens = &sample.shuffled_patches;
    check_inputs(
        cfg,
        tokens.n_tokens(),
        tokens.patch_len(),
        &positions,
        &sample.key_mask,
    )?;
    let hidden: Vec<usize> = (0..cfg.n_tokens)
        .filter(|&i| !sample.pe_visibility.0[i])
        .collect();
    if hidden.is_empty() {
        return Err(Error::validation(
            "pretext sample has no hidden-position tokens",
        ));
    }
    let cache = forward(
        params,
        cfg,
        tokens.as_slice(),
        &positions,
        &sample.key_mask,
        pe,
        mode,
    )?;
    let logits = position_logits(params, &cache.output);
    let mut d_logits = Mat::zeros(logits.rows(), logits.cols());
    let inv_hidden = T::one() / T::of(hidden.len() as f64);
    let mut loss = T::zero();
    for &i in &hidden {
        let label = sample.position_labels[i];
        loss += cross_entropy(logits.row(i), label);
        let p = softmax(logits.row(i));
        let row = d_logits.row_mut(i);
        for (g, &pj) in row.iter_mut().zip(&p) {
            *g = pj * inv_hidden * inv_batch;
        }
        row[label] -= inv_hidden * inv_batch;
    }
    loss *= inv_hidden;
    if !loss.is_finite() {
        return Err(Error::numerical("position_head", "non-finite pretext loss"));
    }
    let head = &params.position_head;
    gemm(
        T::one(),
        cache.output.view().t(),
        d_logits.view(),
        T::one(),
        grad.position_head.weight.view_mut(),
    );
    d_logits.add_col_sums_into(&mut grad.position_head.bias);
    let d_out = matmul(d_logits.view(), head.weight.view().t());
    backward(params, cfg, &cache, &d_out, grad);
    Ok(loss)
}

#[allow(clippy::too_many_arguments)]
fn stage_sample<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    pe: &Mat<T>,
    example: &StageExample<'_>,
    weight: T,
    mode: Mode,
    inv_batch: T,
    grad: &mut ModelParams<T>,
) -> Result<T> {
    let n = cfg.n_tokens;
    let positions = PositionalInput::ordered(n);
    let key_mask = KeyMask::all(n);
    let tokens = example.tokens;
    check_inputs(
        cfg,
        tokens.n_tokens(),
        tokens.patch_len(),
        &positions,
        &key_mask,
    )?;
    let label = example.label.index();
    if label >= cfg.n_classes {
        return Err(Error::validation("label outside the stage head"));
    }
    let cache = forward(
        params,
        cfg,
        tokens.as_slice(),
        &positions,
        &key_mask,
        pe,
        mode,
    )?;
    let pooled = mean_rows(&cache.output);
    let logits = stage_logits(params, &pooled);
    let loss = weight * cross_entropy(&logits, label);
    if !loss.is_finite() {
        return Err(Error::numerical("stage_head", "non-finite stage loss"));
    }
    let mut d_logits = softmax(&logits);
    d_logits[label] -= T::one();
    d_logits.iter_mut().for_each(|g| *g *= weight * inv_batch);

    let head = &params.stage_head;
    let gh = &mut grad.stage_head;
    let mut d_pooled = vec![T::zero(); pooled.len()];
    for (i, &p) in pooled.iter().enumerate() {
        let wrow = head.weight.row(i);
        let grow = gh.weight.row_mut(i);
        let mut acc = T::zero();
        for ((g, &w), &dl) in grow.iter_mut().zip(wrow).zip(&d_logits) {
            *g += p * dl;
            acc += w * dl;
        }
        d_pooled[i] = acc;
    }
    for (b, &dl) in gh.bias.iter_mut().zip(&d_logits) {
        *b += dl;
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut d_out = Mat::zeros(n, pooled.len());
    for i in 0..n {
        for (o, &g) in d_out.row_mut(i).iter_mut().zip(&d_pooled) {
            *o = g * inv_n;
        }
    }
    backward(params, cfg, &cache, &d_out, grad);
    Ok(loss)
}

/// Batch-mean loss and its gradient with respect to every parameter.
pub fn loss_and_gradients<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    batch: &Batch<'_>,
    opts: &GradOptions,
) -> Result<(T, ModelParams<T>)> {
    cfg.validate()?;
    let b = batch.len();
    if b == 0 {
        return Err(Error::validation("empty batch"));
    }
    let pe = sinusoidal_pe::<T>(cfg.n_tokens, cfg.d_model)?;
    let inv_batch = T::one() / T::of(b as f64);
    let chunks: Vec<std::ops::Range<usize>> = (0..b)
        .step_by(GRAD_CHUNK)
        .map(|s| s..(s + GRAD_CHUNK).min(b))
        .collect();

    let run_chunk = |range: &std::ops::Range<usize>| -> Result<(T, ModelParams<T>)> {
        let mut grad = ModelParams::zeros(cfg);
        let mut loss = T::zero();
        for i in range.clone() {
            let mode = sample_mode(opts, i);
            loss += match batch {
                Batch::Pretext(samples) => {
                    pretext_sample(params, cfg, &pe, &samples[i], mode, inv_batch, &mut grad)?
                }
                Batch::Stage {
                    examples,
                    class_weights,
                } => {
                    let w = T::of(class_weights[examples[i].label.index()]);
                    stage_sample(
                        params,
                        cfg,
                        &pe,
                        &examples[i],
                        w,
                        mode,
                        inv_batch,
                        &mut grad,
                    )?
                }
            };
        }
        Ok((loss, grad))
    };

    let width = opts.execution.width();
    let mut total: Option<(T, ModelParams<T>)> = None;
    for wave in chunks.chunks(width) {
        for partial in parallel::map(opts.execution, wave, run_chunk) {
            let (loss, grad) = partial?;
            match total.as_mut() {
                None => total = Some((loss, grad)),
                Some((l, g)) => {
                    *l += loss;
                    g.add_scaled(&grad, T::one());
                }
            }
        }
    }
    let (loss_sum, grad) = total.expect("non-empty batch");
    let loss = loss_sum * inv_batch;
    if !loss.is_finite() {
        return Err(Error::numerical("loss", "non-finite batch loss"));
    }
    if let Some(name) = grad.first_non_finite() {
        return Err(Error::numerical(name, "non-finite gradient"));
    }
    Ok((loss, grad))
}
