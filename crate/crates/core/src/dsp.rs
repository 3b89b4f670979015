//! Signal conditioning: Fourier resampling, instance normalization and patch
//! tokenization. The standard chain is resample → normalize → tokenize.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Rate the model consumes, Hz.
pub const TARGET_RATE_HZ: f64 = 100.0;
/// Samples in one 30 s epoch at [`TARGET_RATE_HZ`].
pub const SIGNAL_LEN: usize = 3000;
pub const PATCH_LEN: usize = 30;
pub const N_TOKENS: usize = 101;
/// Standard deviations below this are treated as a flat signal.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// Patches of a single epoch, `n_tokens × patch_len`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    n_tokens: usize,
    patch_len: usize,
    patches: Vec<f32>,
}

impl TokenSequence {
    pub fn from_rows(n_tokens: usize, patch_len: usize, patches: Vec<f32>) -> Result<Self> {
        if patches.len() != n_tokens * patch_len {
            return Err(Error::validation(format!(
                "token matrix has {} entries, expected {n_tokens}×{patch_len}",
                patches.len()
            )));
        }
        if patches.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("token matrix contains NaN or Inf"));
        }
        Ok(TokenSequence {
            n_tokens,
            patch_len,
            patches,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.patches[i * self.patch_len..(i + 1) * self.patch_len]
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> TokenSequence {
        debug_assert_eq!(order.len(), self.n_tokens);
        let mut patches = Vec::with_capacity(self.patches.len());
        for &src in order {
            patches.extend_from_slice(self.patch(src));
        }
        TokenSequence {
            n_tokens: self.n_tokens,
            patch_len: self.patch_len,
            patches,
        }
    }

    /// Concatenated patches truncated to `len` samples.
    pub fn flatten(&self, len: usize) -> Vec<f32> {
        self.patches[..len.min(self.patches.len())].to_vec()
    }
}

/// Band-limited resampling by truncating or zero-padding the DFT spectrum.
pub fn resample_fourier(signal: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>> {
    if !(from_hz > 0.0 && to_hz > 0.0) {
        return Err(Error::validation("sample rates must be positive"));
    }
    let n = signal.len();
    let exact = n as f64 * to_hz / from_hz;
    let m = exact.round();
    if (exact - m).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "{n} samples at {from_hz} Hz do not map to a whole number of samples at {to_hz} Hz"
        )));
    }
    let m = m as usize;
    if n == 0 || m == 0 {
        return Ok(vec![0.0; m]);
    }
    if m == n {
        return Ok(signal.to_vec());
    }

    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);

    let mut out = vec![Complex::new(0.0, 0.0); m];
    let keep = n.min(m);
    // Bins strictly below the shorter length's Nyquist map one-to-one.
    let half = keep.div_ceil(2);
    out[..half].copy_from_slice(&spec[..half]);
    for k in 1..half {
        out[m - k] = spec[n - k];
    }
    if keep.is_multiple_of(2) {
        let ny = keep / 2;
        if m < n {
            // Both aliases land on the new Nyquist bin.
            out[ny] = spec[ny] + spec[n - ny];
        } else {
            // Split the old Nyquist bin across the two new symmetric bins.
            let h = spec[ny] * 0.5;
            out[ny] = h;
            out[m - ny] = h;
        }
    }

    planner.plan_fft_inverse(m).process(&mut out);
    // Inverse is unnormalized (factor m); amplitude scaling is m/n.
    let scale = 1.0 / n as f64;
    Ok(out.into_iter().map(|c| c.re * scale).collect())
}

/// Zero-mean, unit-variance copy (population variance). Flat signals map to zeros.
pub fn instance_normalize(signal: &[f64], eps: f64) -> Vec<f64> {
    if signal.is_empty() {
        return Vec::new();
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < eps {
        return vec![0.0; signal.len()];
    }
    signal.iter().map(|x| (x - mean) / sd).collect()
}

/// Cuts `signal` into `n_tokens` non-overlapping patches, right-padding with the
/// final sample when the grid is longer than the signal.
pub fn tokenize_grid(signal: &[f32], patch_len: usize, n_tokens: usize) -> Result<TokenSequence> {
    let total = patch_len * n_tokens;
    if patch_len == 0 || n_tokens == 0 {
        return Err(Error::validation(
            "patch length and token count must be positive",
        ));
    }
    if signal.is_empty() || signal.len() > total || signal.len() < total - patch_len {
        return Err(Error::validation(format!(
            "a {}-sample signal does not fill a {n_tokens}×{patch_len} grid with at most one patch of padding",
            signal.len()
        )));
    }
    let mut patches = Vec::with_capacity(total);
    patches.extend_from_slice(signal);
    patches.resize(total, *signal.last().unwrap());
    TokenSequence::from_rows(n_tokens, patch_len, patches)
}

/// Standard tokenization of one 3000-sample epoch: padded to 3030 and cut into
/// 3000 / `patch_len` + 1 patches (101 × 30 by default).
pub fn tokenize(signal: &[f32], patch_len: usize) -> Result<TokenSequence> {
    if signal.len() != SIGNAL_LEN {
        return Err(Error::validation(format!(
            "expected a {SIGNAL_LEN}-sample epoch, got {}",
            signal.len()
        )));
    }
    if patch_len == 0 || !SIGNAL_LEN.is_multiple_of(patch_len) {
        return Err(Error::validation(format!(
            "patch length {patch_len} does not divide {SIGNAL_LEN}"
        )));
    }
    tokenize_grid(signal, patch_len, SIGNAL_LEN / patch_len + 1)
}

/// Full conditioning chain for one recorded epoch.
pub fn prepare_epoch(
    signal: &[f32],
    rate_hz: f32,
    patch_len: usize,
    n_tokens: usize,
) -> Result<TokenSequence> {
    let raw: Vec<f64> = signal.iter().map(|&x| x as f64).collect();
    let resampled = resample_fourier(&raw, rate_hz as f64, TARGET_RATE_HZ)?;
    let normalized = instance_normalize(&resampled, NORMALIZE_EPS);
    let as_f32: Vec<f32> = normalized.iter().map(|&x| x as f32).collect();
    tokenize_grid(&as_f32, patch_len, n_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate).sin())
            .collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn downsample_length_and_sine() {
        let x = sine(10.0, 200.0, 6000);
        let y = resample_fourier(&x, 200.0, 100.0).unwrap();
        assert_eq!(y.len(), 3000);
        assert!(max_abs_diff(&y, &sine(10.0, 100.0, 3000)) < 1e-5);
    }

    #[test]
    fn upsample_sine_and_constant() {
        let x = sine(7.0, 100.0, 3000);
        let y = resample_fourier(&x, 100.0, 200.0).unwrap();
        assert!(max_abs_diff(&y, &sine(7.0, 200.0, 6000)) < 1e-5);
        for (n, from, to) in [(30usize, 3.0, 2.0), (31, 1.0, 3.0), (64, 2.0, 1.0)] {
            let c = vec![2.5; n];
            let y = resample_fourier(&c, from, to).unwrap();
            assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12), "{n} {from} {to}");
        }
    }

    #[test]
    fn nyquist_component_survives_downsampling() {
        // cos at exactly the new Nyquist (50 Hz at 100 Hz) with a phase offset.
        let x: Vec<f64> = (0..400)
            .map(|i| (PI * i as f64 / 2.0 + 0.3).cos())
            .collect();
        let y = resample_fourier(&x, 200.0, 100.0).unwrap();
        let expect: Vec<f64> = (0..200).map(|m| (PI * m as f64 + 0.3).cos()).collect();
        assert!(max_abs_diff(&y, &expect) < 1e-9);
    }

    #[test]
    fn resample_rejects_fractional_lengths() {
        assert!(resample_fourier(&[0.0; 7], 2.0, 1.0).is_err());
        assert!(resample_fourier(&[0.0; 8], 0.0, 1.0).is_err());
    }

    #[test]
    fn normalize_cases() {
        assert!(instance_normalize(&[3.0; 100], NORMALIZE_EPS)
            .iter()
            .all(|&v| v == 0.0));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-4.0..9.0)).collect();
        let y = instance_normalize(&x, NORMALIZE_EPS);
        // two-pass recomputation
        let mean = y.iter().sum::<f64>() / 3000.0;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3000.0).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((sd - 1.0).abs() < 1e-6);
        let z = instance_normalize(&y, NORMALIZE_EPS);
        assert!(max_abs_diff(&y, &z) < 1e-6);
    }

    #[test]
    fn tokenize_ramp() {
        let ramp: Vec<f32> = (0..3000).map(|i| i as f32).collect();
        let t = tokenize(&ramp, 30).unwrap();
        assert_eq!((t.n_tokens(), t.patch_len()), (101, 30));
        for k in 0..100 {
            let expect: Vec<f32> = (30 * k..30 * k + 30).map(|i| i as f32).collect();
            assert_eq!(t.patch(k), expect.as_slice());
        }
        assert!(t.patch(100).iter().all(|&v| v == 2999.0));
        assert_eq!(t.flatten(3000), ramp);
    }

    #[test]
    fn tokenize_zero_and_errors() {
        let t = tokenize(&[0.0; 3000], 30).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(t.as_slice().len(), 101 * 30);
        assert!(tokenize(&[0.0; 2999], 30).is_err());
        assert!(tokenize(&[0.0; 3000], 7).is_err());
        assert!(tokenize_grid(&[0.0; 10], 5, 9).is_err());
        assert_eq!(tokenize_grid(&[1.0; 41], 5, 9).unwrap().n_tokens(), 9);
    }

    #[test]
    fn prepare_handles_both_rates() {
        let x: Vec<f32> = sine(5.0, 200.0, 6000)
            .iter()
            .map(|&v| 3.0 * v as f32 + 1.0)
            .collect();
        let t = prepare_epoch(&x, 200.0, 30, 101).unwrap();
        assert_eq!(t.as_slice().len(), 3030);
        let body = t.flatten(3000);
        let mean: f32 = body.iter().sum::<f32>() / 3000.0;
        assert!(mean.abs() < 1e-4);
    }
}
