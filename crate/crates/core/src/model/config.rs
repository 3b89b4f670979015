use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder architecture. Defaults are the full-size reference model
/// (101 tokens of 30 samples, width 512, six layers, eight heads).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_len: usize,
    pub n_tokens: usize,
    pub d_model: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub n_positions: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_len: 30,
            n_tokens: 101,
            d_model: 512,
            depth: 6,
            n_heads: 8,
            d_ff: 2048,
            dropout: 0.1,
            n_positions: 101,
            n_classes: 5,
        }
    }
}

impl ModelConfig {
    /// Small encoder used for desk-scale experiments: width 64, two layers.
    pub fn small() -> Self {
        ModelConfig {
            d_model: 64,
            depth: 2,
            n_heads: 4,
            d_ff: 128,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("patch_len", self.patch_len),
            ("n_tokens", self.n_tokens),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("n_positions", self.n_positions),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::validation(
                "sinusoidal encodings need an even d_model",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.n_positions < self.n_tokens {
            return Err(Error::validation(format!(
                "position head has {} outputs for {} tokens",
                self.n_positions, self.n_tokens
            )));
        }
        Ok(())
    }
}

/// Learnable scalar count:
///
/// * patch embedding: `patch_len·d + d`
/// * per layer: four attention projections `4·(d² + d)`, feed-forward
///   `d·ff + ff + ff·d + d`, two layer norms `4·d`
/// * final layer norm: `2·d`
/// * position head `d·n_positions + n_positions`, stage head `d·n_classes + n_classes`
///
/// The reference configuration gives 18,985,578.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let embed = cfg.patch_len * d + d;
    let attn = 4 * (d * d + d);
    let ff = d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d;
    let norms = 4 * d;
    let final_norm = 2 * d;
    let heads = d * cfg.n_positions + cfg.n_positions + d * cfg.n_classes + cfg.n_classes;
    embed + cfg.depth * (attn + ff + norms) + final_norm + heads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_count_within_half_percent() {
        let n = count_parameters(&ModelConfig::default());
        assert_eq!(n, 18_985_578);
        let rel = (n as f64 - 18_986_661.0).abs() / 18_986_661.0;
        assert!(rel < 0.005, "{rel}");
    }

    #[test]
    fn zero_depth_has_only_embedding_norm_and_heads() {
        let cfg = ModelConfig {
            depth: 0,
            ..ModelConfig::default()
        };
        let expect = (30 * 512 + 512) + 2 * 512 + (512 * 101 + 101) + (512 * 5 + 5);
        assert_eq!(count_parameters(&cfg), expect);
    }

    #[test]
    fn tiny_count_by_hand() {
        let cfg = ModelConfig {
            patch_len: 5,
            n_tokens: 9,
            d_model: 16,
            depth: 2,
            n_heads: 2,
            d_ff: 32,
            dropout: 0.0,
            n_positions: 9,
            n_classes: 5,
        };
        // embed 96, layer 1088 + 1072 + 64 = 2224, final 32, heads 153 + 85
        assert_eq!(count_parameters(&cfg), 96 + 2 * 2224 + 32 + 153 + 85);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            d_ff: 0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        let json = r#"{"d_model": 64, "bogus": 1}"#;
        assert!(serde_json::from_str::<ModelConfig>(json).is_err());
        let json = r#"{"d_model": 64}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.depth, 6);
    }
}
