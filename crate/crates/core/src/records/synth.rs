//! Synthetic single-channel sleep recordings.
//!
//! Each stage has its own spectral signature:
//!
//! | stage | content |
//! |-------|---------|
//! | W     | 8–12 Hz rhythm plus strong broadband noise |
//! | NR1   | 4–7 Hz rhythm |
//! | NR2   | 4–7 Hz base with 12–14 Hz spindle bursts |
//! | NR3   | high-amplitude 0.5–2 Hz waves |
//! | R     | low-amplitude 4–8 Hz mixture |
//!
//! Every epoch also carries a fixed-phase chirp sweeping 1 → 20 Hz over the
//! 30 s window, so the content of a patch weakly identifies its position in
//! the epoch. Subjects differ by a gain, a frequency offset and a noise floor.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{epoch_len, EpochRecord, SleepStage, SubjectSet, EPOCH_SECONDS, SUPPORTED_RATES_HZ};
use crate::error::{Error, Result};
use crate::seed::{self, tag};

/// Stage mix W/NR1/NR2/NR3/R of the reference training cohort.
pub const DEFAULT_STAGE_PROPORTIONS: [f64; 5] = [0.18, 0.15, 0.42, 0.12, 0.13];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    pub stage_proportions: [f64; 5],
    pub sample_rate_hz: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 20,
            epochs_per_subject: 200,
            stage_proportions: DEFAULT_STAGE_PROPORTIONS,
            sample_rate_hz: 100.0,
            seed: 0,
        }
    }
}

const CHIRP_AMPLITUDE: f64 = 0.3;
const CHIRP_START_HZ: f64 = 1.0;
const CHIRP_END_HZ: f64 = 20.0;

struct SubjectTraits {
    gain: f64,
    freq_shift: f64,
    noise_floor: f64,
}

/// Per-subject label counts by largest-remainder apportionment, so every
/// subject matches the requested mix to within one epoch per stage.
fn apportion(n: usize, proportions: &[f64; 5]) -> [usize; 5] {
    let quotas = proportions.map(|p| p * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn add_tone(out: &mut [f64], rate: f64, freq: f64, amp: f64, phase: f64) {
    let w = 2.0 * PI * freq / rate;
    for (i, x) in out.iter_mut().enumerate() {
        *x += amp * (w * i as f64 + phase).sin();
    }
}

#[allow(clippy::too_many_arguments)]
fn add_tones<R: Rng>(
    out: &mut [f64],
    rate: f64,
    rng: &mut R,
    n: usize,
    band: (f64, f64),
    amp: (f64, f64),
    shift: f64,
    gain: f64,
) {
    for _ in 0..n {
        let f = (rng.random_range(band.0..band.1) + shift).max(0.25);
        let a = gain * rng.random_range(amp.0..amp.1);
        let ph = rng.random_range(0.0..2.0 * PI);
        add_tone(out, rate, f, a, ph);
    }
}

fn add_noise<R: Rng>(out: &mut [f64], rng: &mut R, sd: f64) {
    // Box-Muller keeps the stream independent of any distribution crate's
    // internal sampling strategy.
    for pair in out.chunks_mut(2) {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt() * sd;
        pair[0] += r * (2.0 * PI * u2).cos();
        if let Some(x) = pair.get_mut(1) {
            *x += r * (2.0 * PI * u2).sin();
        }
    }
}

fn add_spindles<R: Rng>(out: &mut [f64], rate: f64, rng: &mut R, gain: f64) {
    let n_bursts = rng.random_range(1..=3);
    for _ in 0..n_bursts {
        let dur = rng.random_range(0.5..1.5);
        let start = rng.random_range(0.0..EPOCH_SECONDS - dur);
        let f = rng.random_range(12.0..14.0);
        let ph = rng.random_range(0.0..2.0 * PI);
        let amp = gain * rng.random_range(1.2..1.8);
        let i0 = (start * rate) as usize;
        let len = (dur * rate) as usize;
        for k in 0..len.min(out.len().saturating_sub(i0)) {
            let env = 0.5 - 0.5 * (2.0 * PI * k as f64 / len as f64).cos();
            let t = (i0 + k) as f64 / rate;
            out[i0 + k] += amp * env * (2.0 * PI * f * t + ph).sin();
        }
    }
}

fn add_chirp(out: &mut [f64], rate: f64) {
    let sweep = (CHIRP_END_HZ - CHIRP_START_HZ) / (2.0 * EPOCH_SECONDS);
    for (i, x) in out.iter_mut().enumerate() {
        let t = i as f64 / rate;
        *x += CHIRP_AMPLITUDE * (2.0 * PI * (CHIRP_START_HZ * t + sweep * t * t)).sin();
    }
}

fn stage_epoch<R: Rng>(
    stage: SleepStage,
    rate: f64,
    traits: &SubjectTraits,
    rng: &mut R,
) -> Vec<f32> {
    let n = (EPOCH_SECONDS * rate).round() as usize;
    let mut x = vec![0.0f64; n];
    let (g, s) = (traits.gain, traits.freq_shift);
    match stage {
        SleepStage::W => {
            add_tones(&mut x, rate, rng, 3, (8.0, 12.0), (0.6, 1.0), s, g);
            add_noise(&mut x, rng, 0.8 * g);
        }
        SleepStage::NR1 => {
            add_tones(&mut x, rate, rng, 3, (4.0, 7.0), (0.6, 1.0), s, g);
        }
        SleepStage::NR2 => {
            add_tones(&mut x, rate, rng, 2, (4.0, 7.0), (0.5, 0.8), s, g);
            add_spindles(&mut x, rate, rng, g);
        }
        SleepStage::NR3 => {
            add_tones(&mut x, rate, rng, 3, (0.5, 2.0), (2.0, 3.0), 0.0, g);
        }
        SleepStage::R => {
            add_tones(&mut x, rate, rng, 4, (4.0, 8.0), (0.2, 0.4), s, g);
        }
    }
    add_noise(&mut x, rng, traits.noise_floor);
    add_chirp(&mut x, rate);
    x.into_iter().map(|v| v as f32).collect()
}

/// Deterministic synthetic corpus. Subject ids are `S0000`, `S0001`, ….
pub fn synthesize_corpus(
    n_subjects: usize,
    epochs_per_subject: usize,
    stage_proportions: [f64; 5],
    sample_rate_hz: f32,
    seed: u64,
) -> Result<SubjectSet> {
    if n_subjects == 0 {
        return Err(Error::validation("need at least one subject"));
    }
    if stage_proportions.iter().any(|p| p.is_nan() || *p < 0.0) {
        return Err(Error::validation("stage proportions must be non-negative"));
    }
    let total: f64 = stage_proportions.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::validation(format!(
            "stage proportions sum to {total}, not 1"
        )));
    }
    if !SUPPORTED_RATES_HZ.contains(&sample_rate_hz) {
        return Err(Error::validation(format!(
            "sample rate {sample_rate_hz} Hz not in {{100, 200}}"
        )));
    }
    debug_assert_eq!(
        epoch_len(sample_rate_hz),
        (EPOCH_SECONDS * sample_rate_hz as f64) as usize
    );
    let rate = sample_rate_hz as f64;
    let counts = apportion(epochs_per_subject, &stage_proportions);

    let mut set = SubjectSet::new();
    for s in 0..n_subjects {
        let id = format!("S{s:04}");
        let mut rng = seed::rng(seed, &[tag::SYNTH_SUBJECT, s as u64]);
        let traits = SubjectTraits {
            gain: rng.random_range(0.8..1.25),
            freq_shift: rng.random_range(-0.5..0.5),
            noise_floor: rng.random_range(0.1..0.3),
        };
        let mut labels: Vec<SleepStage> = SleepStage::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&st, c)| std::iter::repeat_n(st, c))
            .collect();
        labels.shuffle(&mut rng);
        let epochs = labels
            .into_iter()
            .enumerate()
            .map(|(e, label)| {
                let mut erng = seed::rng(seed, &[tag::SYNTH_EPOCH, s as u64, e as u64]);
                EpochRecord {
                    subject_id: id.clone(),
                    epoch_index: e as u32,
                    sample_rate_hz,
                    signal: stage_epoch(label, rate, &traits, &mut erng),
                    label,
                }
            })
            .collect();
        set.insert(id, epochs)?;
    }
    Ok(set)
}
