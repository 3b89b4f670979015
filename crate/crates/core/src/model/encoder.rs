//! Post-norm Transformer encoder with cached forward pass and manual backward.
//!
//! Per layer:
//! `h1 = LN(h + drop(MHA(h)))`, `out = LN(h1 + drop(W2·relu(W1·h1)))`,
//! followed after the last layer by a final layer norm.

use rand::Rng;

use super::config::ModelConfig;
use super::params::{EncoderLayer, LayerNorm, Linear, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul, Mat, Real};
use crate::seed;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Keys/values visible to every query; `false` entries are excluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyMask(pub Vec<bool>);

impl KeyMask {
    pub fn all(n: usize) -> Self {
        KeyMask(vec![true; n])
    }

    pub fn n_visible(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Tokens whose positional encoding is added to their embedding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeVisibility(pub Vec<bool>);

impl PeVisibility {
    pub fn n_visible(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// For each token, the sinusoidal row (if any) added to its embedding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositionalInput(pub Vec<Option<usize>>);

impl PositionalInput {
    /// Token `i` receives row `i`.
    pub fn ordered(n: usize) -> Self {
        PositionalInput((0..n).map(Some).collect())
    }

    pub fn none(n: usize) -> Self {
        PositionalInput(vec![None; n])
    }

    /// Visible tokens receive the row of their original position.
    pub fn from_visibility(vis: &PeVisibility, original_positions: &[usize]) -> Self {
        PositionalInput(
            vis.0
                .iter()
                .zip(original_positions)
                .map(|(&v, &p)| v.then_some(p))
                .collect(),
        )
    }
}

/// Dropout is active only in `Train` mode, with masks drawn from `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

pub(crate) struct NormCache<T> {
    xhat: Mat<T>,
    inv_std: Vec<T>,
}

pub(crate) struct LayerCache<T> {
    input: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    attn: Vec<Mat<T>>,
    ctx: Mat<T>,
    drop_attn: Option<Vec<T>>,
    norm_attn: NormCache<T>,
    h1: Mat<T>,
    hidden: Mat<T>,
    drop_ff: Option<Vec<T>>,
    norm_ff: NormCache<T>,
}

pub(crate) struct ForwardCache<T> {
    patches: Mat<T>,
    layers: Vec<LayerCache<T>>,
    last_hidden: Mat<T>,
    final_norm: NormCache<T>,
    pub(crate) output: Mat<T>,
}

impl<T> ForwardCache<T> {
    #[cfg(test)]
    pub(crate) fn attention(&self, layer: usize, head: usize) -> &Mat<T> {
        &self.layers[layer].attn[head]
    }
}

fn linear_forward<T: Real>(x: &Mat<T>, lin: &Linear<T>) -> Mat<T> {
    let mut y = matmul(x.view(), lin.weight.view());
    y.add_row_vector(&lin.bias);
    y
}

/// Accumulates weight/bias gradients and returns `dy · Wᵀ`.
fn linear_backward<T: Real>(
    x: &Mat<T>,
    dy: &Mat<T>,
    lin: &Linear<T>,
    grad: &mut Linear<T>,
) -> Mat<T> {
    gemm(
        T::one(),
        x.view().t(),
        dy.view(),
        T::one(),
        grad.weight.view_mut(),
    );
    dy.add_col_sums_into(&mut grad.bias);
    matmul(dy.view(), lin.weight.view().t())
}

fn linear_backward_accumulate<T: Real>(
    x: &Mat<T>,
    dy: &Mat<T>,
    lin: &Linear<T>,
    grad: &mut Linear<T>,
    dx: &mut Mat<T>,
) {
    gemm(
        T::one(),
        x.view().t(),
        dy.view(),
        T::one(),
        grad.weight.view_mut(),
    );
    dy.add_col_sums_into(&mut grad.bias);
    gemm(
        T::one(),
        dy.view(),
        lin.weight.view().t(),
        T::one(),
        dx.view_mut(),
    );
}

fn layer_norm_forward<T: Real>(x: &Mat<T>, norm: &LayerNorm<T>) -> (Mat<T>, NormCache<T>) {
    let (n, d) = (x.rows(), x.cols());
    let mut xhat = Mat::zeros(n, d);
    let mut y = Mat::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    let dn = T::of(d as f64);
    let eps = T::of(LAYER_NORM_EPS);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let r = T::one() / (var + eps).sqrt();
        inv_std.push(r);
        let xh = xhat.row_mut(i);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
        let xh = xhat.row(i);
        for ((o, &h), (&g, &b)) in y
            .row_mut(i)
            .iter_mut()
            .zip(xh)
            .zip(norm.gain.iter().zip(&norm.bias))
        {
            *o = g * h + b;
        }
    }
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward<T: Real>(
    dy: &Mat<T>,
    cache: &NormCache<T>,
    norm: &LayerNorm<T>,
    grad: &mut LayerNorm<T>,
) -> Mat<T> {
    let (n, d) = (dy.rows(), dy.cols());
    let dn = T::of(d as f64);
    let mut dx = Mat::zeros(n, d);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let g = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            grad.gain[j] += g[j] * xh[j];
            grad.bias[j] += g[j];
            dxhat[j] = g[j] * norm.gain[j];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() / dn;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / dn;
        let r = cache.inv_std[i];
        for ((o, &dh), &h) in dx.row_mut(i).iter_mut().zip(&dxhat).zip(xh) {
            *o = r * (dh - mean_dxhat - h * mean_dxhat_xhat);
        }
    }
    dx
}

fn dropout_mask<T: Real>(len: usize, rate: f64, seed: u64, path: &[u64]) -> Vec<T> {
    let mut rng = seed::rng(seed, path);
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

fn apply_mask<T: Real>(x: &mut Mat<T>, mask: &[T]) {
    for (v, &m) in x.as_mut_slice().iter_mut().zip(mask) {
        *v *= m;
    }
}

/// Row-wise softmax of `scores` restricted to visible keys; masked keys get
/// exactly zero weight.
fn masked_softmax_rows<T: Real>(scores: &mut Mat<T>, key_mask: &[bool]) {
    for i in 0..scores.rows() {
        let row = scores.row_mut(i);
        let mut max = T::neg_infinity();
        for (&s, &m) in row.iter().zip(key_mask) {
            if m && s > max {
                max = s;
            }
        }
        let mut sum = T::zero();
        for (s, &m) in row.iter_mut().zip(key_mask) {
            *s = if m { (*s - max).exp() } else { T::zero() };
            sum += *s;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|s| *s *= inv);
    }
}

fn layer_forward<T: Real>(
    layer: &EncoderLayer<T>,
    cfg: &ModelConfig,
    input: Mat<T>,
    key_mask: &[bool],
    dropout: Option<(f64, u64, u64)>,
) -> (Mat<T>, LayerCache<T>) {
    let (n, d) = (input.rows(), input.cols());
    let heads = cfg.n_heads;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let q = linear_forward(&input, &layer.query);
    let k = linear_forward(&input, &layer.key);
    let v = linear_forward(&input, &layer.value);
    let mut ctx = Mat::zeros(n, d);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut s = Mat::zeros(n, n);
        gemm(
            scale,
            q.view().cols(h * dh, dh),
            k.view().cols(h * dh, dh).t(),
            T::zero(),
            s.view_mut(),
        );
        masked_softmax_rows(&mut s, key_mask);
        gemm(
            T::one(),
            s.view(),
            v.view().cols(h * dh, dh),
            T::zero(),
            ctx.view_mut().cols(h * dh, dh),
        );
        attn.push(s);
    }
    let mut attn_out = linear_forward(&ctx, &layer.output);
    let drop_attn = dropout.map(|(rate, seed, layer_idx)| {
        let m = dropout_mask::<T>(n * d, rate, seed, &[seed::tag::DROPOUT, layer_idx, 0]);
        apply_mask(&mut attn_out, &m);
        m
    });
    let mut r1 = input.clone();
    for (a, &b) in r1.as_mut_slice().iter_mut().zip(attn_out.as_slice()) {
        *a += b;
    }
    let (h1, norm_attn) = layer_norm_forward(&r1, &layer.norm_attn);

    let mut hidden = linear_forward(&h1, &layer.ff_in);
    hidden.as_mut_slice().iter_mut().for_each(|x| {
        if *x < T::zero() {
            *x = T::zero();
        }
    });
    let mut ff = linear_forward(&hidden, &layer.ff_out);
    let drop_ff = dropout.map(|(rate, seed, layer_idx)| {
        let m = dropout_mask::<T>(n * d, rate, seed, &[seed::tag::DROPOUT, layer_idx, 1]);
        apply_mask(&mut ff, &m);
        m
    });
    let mut r2 = h1.clone();
    for (a, &b) in r2.as_mut_slice().iter_mut().zip(ff.as_slice()) {
        *a += b;
    }
    let (out, norm_ff) = layer_norm_forward(&r2, &layer.norm_ff);
    (
        out,
        LayerCache {
            input,
            q,
            k,
            v,
            attn,
            ctx,
            drop_attn,
            norm_attn,
            h1,
            hidden,
            drop_ff,
            norm_ff,
        },
    )
}

fn layer_backward<T: Real>(
    layer: &EncoderLayer<T>,
    grad: &mut EncoderLayer<T>,
    cfg: &ModelConfig,
    cache: &LayerCache<T>,
    d_out: &Mat<T>,
) -> Mat<T> {
    let (n, d) = (d_out.rows(), d_out.cols());
    let heads = cfg.n_heads;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    // feed-forward block
    let d_r2 = layer_norm_backward(d_out, &cache.norm_ff, &layer.norm_ff, &mut grad.norm_ff);
    let mut d_ff = d_r2.clone();
    if let Some(m) = &cache.drop_ff {
        apply_mask(&mut d_ff, m);
    }
    let mut d_hidden = linear_backward(&cache.hidden, &d_ff, &layer.ff_out, &mut grad.ff_out);
    for (g, &h) in d_hidden
        .as_mut_slice()
        .iter_mut()
        .zip(cache.hidden.as_slice())
    {
        if h <= T::zero() {
            *g = T::zero();
        }
    }
    let mut d_h1 = d_r2;
    linear_backward_accumulate(
        &cache.h1,
        &d_hidden,
        &layer.ff_in,
        &mut grad.ff_in,
        &mut d_h1,
    );

    // attention block
    let d_r1 = layer_norm_backward(
        &d_h1,
        &cache.norm_attn,
        &layer.norm_attn,
        &mut grad.norm_attn,
    );
    let mut d_attn_out = d_r1.clone();
    if let Some(m) = &cache.drop_attn {
        apply_mask(&mut d_attn_out, m);
    }
    let d_ctx = linear_backward(&cache.ctx, &d_attn_out, &layer.output, &mut grad.output);

    let mut dq = Mat::zeros(n, d);
    let mut dk = Mat::zeros(n, d);
    let mut dv = Mat::zeros(n, d);
    let mut d_probs = Mat::zeros(n, n);
    for h in 0..heads {
        let a = &cache.attn[h];
        gemm(
            T::one(),
            d_ctx.view().cols(h * dh, dh),
            cache.v.view().cols(h * dh, dh).t(),
            T::zero(),
            d_probs.view_mut(),
        );
        gemm(
            T::one(),
            a.view().t(),
            d_ctx.view().cols(h * dh, dh),
            T::zero(),
            dv.view_mut().cols(h * dh, dh),
        );
        // softmax backward, in place: dS = A ⊙ (dA − Σ_j dA·A)
        for i in 0..n {
            let ar = a.row(i);
            let dr = d_probs.row_mut(i);
            let dot = ar.iter().zip(dr.iter()).map(|(&x, &y)| x * y).sum::<T>();
            for (g, &p) in dr.iter_mut().zip(ar) {
                *g = p * (*g - dot);
            }
        }
        gemm(
            scale,
            d_probs.view(),
            cache.k.view().cols(h * dh, dh),
            T::zero(),
            dq.view_mut().cols(h * dh, dh),
        );
        gemm(
            scale,
            d_probs.view().t(),
            cache.q.view().cols(h * dh, dh),
            T::zero(),
            dk.view_mut().cols(h * dh, dh),
        );
    }
    let mut d_input = d_r1;
    linear_backward_accumulate(
        &cache.input,
        &dq,
        &layer.query,
        &mut grad.query,
        &mut d_input,
    );
    linear_backward_accumulate(&cache.input, &dk, &layer.key, &mut grad.key, &mut d_input);
    linear_backward_accumulate(
        &cache.input,
        &dv,
        &layer.value,
        &mut grad.value,
        &mut d_input,
    );
    d_input
}

pub(crate) fn check_inputs(
    cfg: &ModelConfig,
    n_tokens: usize,
    patch_len: usize,
    positions: &PositionalInput,
    key_mask: &KeyMask,
) -> Result<()> {
    if patch_len != cfg.patch_len {
        return Err(Error::validation(format!(
            "patch length {patch_len} does not match model ({})",
            cfg.patch_len
        )));
    }
    if n_tokens != cfg.n_tokens {
        return Err(Error::validation(format!(
            "{n_tokens} tokens, model expects {}",
            cfg.n_tokens
        )));
    }
    if positions.0.len() != n_tokens || key_mask.0.len() != n_tokens {
        return Err(Error::validation(
            "positional input or key mask length mismatch",
        ));
    }
    if positions.0.iter().flatten().any(|&p| p >= cfg.n_tokens) {
        return Err(Error::validation(
            "positional index outside the encoding table",
        ));
    }
    if key_mask.n_visible() == 0 {
        return Err(Error::validation("key mask excludes every token"));
    }
    Ok(())
}

/// Full forward pass keeping everything the backward pass needs.
pub(crate) fn forward<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    patches: &[f32],
    positions: &PositionalInput,
    key_mask: &KeyMask,
    pe: &Mat<T>,
    mode: Mode,
) -> Result<ForwardCache<T>> {
    let n = cfg.n_tokens;
    let x = Mat::from_vec(
        n,
        cfg.patch_len,
        patches.iter().map(|&v| T::of(v as f64)).collect(),
    );
    let mut h = linear_forward(&x, &params.embed);
    for (i, pos) in positions.0.iter().enumerate() {
        if let Some(p) = *pos {
            for (a, &b) in h.row_mut(i).iter_mut().zip(pe.row(p)) {
                *a += b;
            }
        }
    }
    let dropout = match mode {
        Mode::Train { seed } if cfg.dropout > 0.0 => Some((cfg.dropout, seed)),
        _ => None,
    };
    let mut layers = Vec::with_capacity(params.layers.len());
    for (li, layer) in params.layers.iter().enumerate() {
        let (out, cache) = layer_forward(
            layer,
            cfg,
            h,
            &key_mask.0,
            dropout.map(|(r, s)| (r, s, li as u64)),
        );
        layers.push(cache);
        h = out;
    }
    let (output, final_norm) = layer_norm_forward(&h, &params.final_norm);
    let cache = ForwardCache {
        patches: x,
        layers,
        last_hidden: h,
        final_norm,
        output,
    };
    if !cache.output.is_finite() {
        return Err(Error::numerical(
            cache.first_non_finite_stage(),
            "non-finite activations",
        ));
    }
    Ok(cache)
}

impl<T: Real> ForwardCache<T> {
    fn first_non_finite_stage(&self) -> String {
        for (i, l) in self.layers.iter().enumerate() {
            if !l.input.is_finite() {
                return if i == 0 {
                    "embedding".into()
                } else {
                    format!("layer {}", i - 1)
                };
            }
        }
        if !self.last_hidden.is_finite() {
            return match self.layers.len() {
                0 => "embedding".into(),
                n => format!("layer {}", n - 1),
            };
        }
        "final_norm".into()
    }
}

/// Backpropagates `d_output` (gradient w.r.t. the final-norm output) into `grad`.
pub(crate) fn backward<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    cache: &ForwardCache<T>,
    d_output: &Mat<T>,
    grad: &mut ModelParams<T>,
) {
    let mut dh = layer_norm_backward(
        d_output,
        &cache.final_norm,
        &params.final_norm,
        &mut grad.final_norm,
    );
    for li in (0..params.layers.len()).rev() {
        dh = layer_backward(
            &params.layers[li],
            &mut grad.layers[li],
            cfg,
            &cache.layers[li],
            &dh,
        );
    }
    // embedding; positional encodings are constants
    gemm(
        T::one(),
        cache.patches.view().t(),
        dh.view(),
        T::one(),
        grad.embed.weight.view_mut(),
    );
    dh.add_col_sums_into(&mut grad.embed.bias);
}

/// Encoder output (`n_tokens × d_model`) for one token sequence.
pub fn encode<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    tokens: &crate::dsp::TokenSequence,
    positions: &PositionalInput,
    key_mask: &KeyMask,
    mode: Mode,
) -> Result<Mat<T>> {
    check_inputs(
        cfg,
        tokens.n_tokens(),
        tokens.patch_len(),
        positions,
        key_mask,
    )?;
    let pe = super::sinusoidal_pe::<T>(cfg.n_tokens, cfg.d_model)?;
    Ok(forward(
        params,
        cfg,
        tokens.as_slice(),
        positions,
        key_mask,
        &pe,
        mode,
    )?
    .output)
}
