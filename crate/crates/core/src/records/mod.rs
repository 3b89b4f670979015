//! Epoched single-channel recordings, grouped by subject.

mod esr;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use esr::{encode_esr, read_esr, write_esr, ESR_MAGIC, ESR_VERSION};
pub use split::{split_sizes, split_subjectwise, subsample_count, subsample_subjects, SplitSpec};
pub use synth::{synthesize_corpus, SynthConfig, DEFAULT_STAGE_PROPORTIONS};

/// Length of one scored epoch, seconds.
pub const EPOCH_SECONDS: f64 = 30.0;

/// Sample rates accepted by the on-disk format.
pub const SUPPORTED_RATES_HZ: [f32; 2] = [100.0, 200.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SleepStage {
    W = 0,
    NR1 = 1,
    NR2 = 2,
    NR3 = 3,
    R = 4,
}

impl SleepStage {
    pub const COUNT: usize = 5;
    pub const ALL: [SleepStage; 5] = [
        SleepStage::W,
        SleepStage::NR1,
        SleepStage::NR2,
        SleepStage::NR3,
        SleepStage::R,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::W => "W",
            SleepStage::NR1 => "NR1",
            SleepStage::NR2 => "NR2",
            SleepStage::NR3 => "NR3",
            SleepStage::R => "R",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Samples in one epoch at `rate_hz`.
pub fn epoch_len(rate_hz: f32) -> usize {
    (EPOCH_SECONDS * rate_hz as f64).round() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub subject_id: String,
    pub epoch_index: u32,
    pub sample_rate_hz: f32,
    pub signal: Vec<f32>,
    pub label: SleepStage,
}

impl EpochRecord {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_RATES_HZ.contains(&self.sample_rate_hz) {
            return Err(Error::validation(format!(
                "epoch {} of {}: sample rate {} Hz not in {{100, 200}}",
                self.epoch_index, self.subject_id, self.sample_rate_hz
            )));
        }
        let want = epoch_len(self.sample_rate_hz);
        if self.signal.len() != want {
            return Err(Error::validation(format!(
                "epoch {} of {}: {} samples, expected {want}",
                self.epoch_index,
                self.subject_id,
                self.signal.len()
            )));
        }
        Ok(())
    }
}

/// Subjects in a fixed order, each with its epochs ordered by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubjectSet {
    ids: Vec<String>,
    epochs: BTreeMap<String, Vec<EpochRecord>>,
}

impl SubjectSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a subject. Epochs are sorted by index; ids must be unique.
    pub fn insert(&mut self, id: impl Into<String>, mut epochs: Vec<EpochRecord>) -> Result<()> {
        let id = id.into();
        if self.epochs.contains_key(&id) {
            return Err(Error::validation(format!("duplicate subject id {id:?}")));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::validation("subject id longer than 65535 bytes"));
        }
        epochs.sort_by_key(|e| e.epoch_index);
        for e in &epochs {
            if e.subject_id != id {
                return Err(Error::validation(format!(
                    "epoch {} claims subject {:?} but was filed under {id:?}",
                    e.epoch_index, e.subject_id
                )));
            }
            e.validate()?;
        }
        if let Some(w) = epochs
            .windows(2)
            .find(|w| w[0].epoch_index == w[1].epoch_index)
        {
            return Err(Error::validation(format!(
                "subject {id:?} has duplicate epoch index {}",
                w[0].epoch_index
            )));
        }
        if let Some(first) = epochs.first() {
            if epochs
                .iter()
                .any(|e| e.sample_rate_hz != first.sample_rate_hz)
            {
                return Err(Error::validation(format!(
                    "subject {id:?} mixes sample rates"
                )));
            }
        }
        self.ids.push(id.clone());
        self.epochs.insert(id, epochs);
        Ok(())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn epochs(&self, id: &str) -> Option<&[EpochRecord]> {
        self.epochs.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.epochs.contains_key(id)
    }

    /// Subjects in order with their epochs.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[EpochRecord])> {
        self.ids
            .iter()
            .map(move |id| (id.as_str(), self.epochs[id].as_slice()))
    }

    /// All epochs, subject-major.
    pub fn all_epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.iter().flat_map(|(_, e)| e.iter())
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs.values().map(Vec::len).sum()
    }

    pub fn label_counts(&self) -> [u64; 5] {
        let mut counts = [0u64; 5];
        for e in self.all_epochs() {
            counts[e.label.index()] += 1;
        }
        counts
    }

    /// New set containing `ids` in the given order.
    pub fn select<S: AsRef<str>>(&self, ids: &[S]) -> Result<SubjectSet> {
        let mut out = SubjectSet::new();
        for id in ids {
            let id = id.as_ref();
            let epochs = self
                .epochs
                .get(id)
                .ok_or_else(|| Error::validation(format!("unknown subject {id:?}")))?;
            out.insert(id, epochs.clone())?;
        }
        Ok(out)
    }

    pub fn is_disjoint(&self, other: &SubjectSet) -> bool {
        self.ids.iter().all(|id| !other.contains(id))
    }
}
