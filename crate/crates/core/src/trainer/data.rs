use crate::dsp::{prepare_epoch, TokenSequence};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::parallel::{self, Execution};
use crate::records::{SleepStage, SubjectSet};

/// Tokenized epochs with their labels, in subject then epoch order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSet {
    pub tokens: Vec<TokenSequence>,
    pub labels: Vec<SleepStage>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn label_counts(&self) -> [u64; SleepStage::COUNT] {
        let mut c = [0; SleepStage::COUNT];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }
}

/// Resamples, normalizes and tokenizes every epoch of `set`.
pub fn prepare_set(set: &SubjectSet, cfg: &ModelConfig, exec: Execution) -> Result<LabeledSet> {
    let records: Vec<_> = set.all_epochs().collect();
    let tokens = parallel::map(exec, &records, |r| {
        prepare_epoch(&r.signal, r.sample_rate_hz, cfg.patch_len, cfg.n_tokens)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(LabeledSet {
        tokens,
        labels: records.iter().map(|r| r.label).collect(),
    })
}

pub(crate) fn require_nonempty(set: &LabeledSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::validation(format!("{what} set holds no epochs")));
    }
    Ok(())
}
