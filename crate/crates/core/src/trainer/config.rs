use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp3::{DEFAULT_KEEP_RATIO, DEFAULT_MASK_RATIO};
use crate::parallel::Execution;

pub const REFERENCE_BATCH_SIZE: usize = 512;
pub const LR_RANGE: (f64, f64) = (1e-5, 1e-3);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    BalancedAccuracy,
}

/// Optimisation settings shared by pretraining and fine-tuning.
///
/// `learning_rate`, `keep_ratio` and `mask_ratio` drive pretraining;
/// fine-tuning runs once per entry of `lr_grid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub keep_ratio: f64,
    pub mask_ratio: f64,
    pub lr_grid: Vec<f64>,
    pub selection_metric: SelectionMetric,
    pub execution: Execution,
}

impl TrainConfig {
    /// 50 epochs at 1e-3, batch 512, half of the positions revealed, no key masking.
    pub fn pretrain_default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: REFERENCE_BATCH_SIZE,
            n_epochs: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            keep_ratio: DEFAULT_KEEP_RATIO,
            mask_ratio: DEFAULT_MASK_RATIO,
            lr_grid: vec![1e-5, 1e-4, 1e-3],
            selection_metric: SelectionMetric::BalancedAccuracy,
            execution: Execution::default(),
        }
    }

    /// 200 epochs, batch 512, one run per learning rate in {1e-5, 1e-4, 1e-3}.
    pub fn finetune_default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            n_epochs: 200,
            ..Self::pretrain_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return bad(format!(
                "learning_rate must lie in (0, 1), got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive".into());
        }
        for (name, r) in [
            ("keep_ratio", self.keep_ratio),
            ("mask_ratio", self.mask_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if self.mask_ratio >= 1.0 {
            return bad("mask_ratio 1 leaves no keys".into());
        }
        if self.lr_grid.is_empty() {
            return bad("lr_grid must not be empty".into());
        }
        for &lr in &self.lr_grid {
            if !(LR_RANGE.0..=LR_RANGE.1).contains(&lr) {
                return bad(format!(
                    "lr_grid entry {lr} outside [{}, {}]",
                    LR_RANGE.0, LR_RANGE.1
                ));
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::finetune_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::pretrain_default().validate().unwrap();
        TrainConfig::finetune_default().validate().unwrap();
        assert_eq!(TrainConfig::pretrain_default().n_epochs, 50);
        assert_eq!(TrainConfig::finetune_default().n_epochs, 200);
    }

    #[test]
    fn rejects_bad_values() {
        let base = TrainConfig::finetune_default();
        let cases = [
            TrainConfig {
                learning_rate: 0.0,
                ..base.clone()
            },
            TrainConfig {
                learning_rate: 1.0,
                ..base.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..base.clone()
            },
            TrainConfig {
                lr_grid: vec![],
                ..base.clone()
            },
            TrainConfig {
                lr_grid: vec![1e-2],
                ..base.clone()
            },
            TrainConfig {
                mask_ratio: 1.0,
                ..base.clone()
            },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
