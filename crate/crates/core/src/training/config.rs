use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeSettings, DecoderOptions};
use crate::error::{Error, Result};
use crate::model::Ablations;

/// Training and decoding hyperparameters. `Default` gives the full-size
/// setting; [`TrainConfig::desk`] a small one that trains on a CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate on a validation plateau.
    pub lr_decay: f64,
    /// Epochs without validation improvement before decaying.
    pub patience: usize,
    pub dropout: f64,
    /// Repetition penalty strength used at decoding time.
    pub penalty: f64,
    pub beam_width: usize,
    pub max_len: usize,
    /// Region and hidden dimension.
    pub d: usize,
    /// Word embedding dimension; `None` means `d`.
    pub embed_dim: Option<usize>,
    /// Regions per image.
    pub k: usize,
    /// Images per story.
    pub n: usize,
    /// Prior bottleneck width.
    pub gamma: usize,
    pub max_epochs: usize,
    /// Stories per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Words rarer than this in training become `<unk>`.
    pub min_count: usize,
    /// Project box coordinates into the region features.
    pub fuse_boxes: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 4e-4,
            lr_decay: 0.8,
            patience: 4,
            dropout: 0.3,
            penalty: 2.0,
            beam_width: 3,
            max_len: 30,
            d: 512,
            embed_dim: None,
            k: 36,
            n: 5,
            gamma: 64,
            max_epochs: 30,
            batch_size: 16,
            seed: 0,
            min_count: 3,
            fuse_boxes: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    /// Small dimensions suited to the synthetic corpus.
    pub fn desk() -> Self {
        TrainConfig {
            d: 32,
            k: 6,
            n: 5,
            gamma: 16,
            min_count: 1,
            max_len: 12,
            ..Default::default()
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("k", self.k),
            ("n", self.n),
            ("gamma", self.gamma),
            ("beam_width", self.beam_width),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
            ("embed_dim", self.embed_dim()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be finite and nonnegative".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument("lr_decay must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        if !(self.penalty >= 0.0) {
            return Err(Error::InvalidArgument("penalty must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidArgument("invalid Adam constants".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Decoding settings with the ablations folded in.
    pub fn decode_settings(&self) -> DecodeSettings {
        DecodeSettings {
            width: self.beam_width,
            max_len: self.max_len,
            penalty: if self.ablations.no_penalty { 0.0 } else { self.penalty },
            count_norm: !self.ablations.no_count_norm,
            options: DecoderOptions {
                use_prior: !self.ablations.no_prior,
                fixed_gate: None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.lr_decay, c.patience), (4e-4, 0.8, 4));
        assert_eq!((c.dropout, c.penalty, c.beam_width, c.d), (0.3, 2.0, 3, 512));
        c.validate().unwrap();
        TrainConfig::desk().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig::desk();
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = TrainConfig::from_toml_str("d = 16\n[ablations]\nno_prior = true\n").unwrap();
        assert_eq!(partial.d, 16);
        assert!(partial.ablations.no_prior);
        assert_eq!(partial.learning_rate, 4e-4);
    }

    #[test]
    fn unknown_and_invalid_fields_are_rejected() {
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
        assert!(TrainConfig::from_toml_str("d = 0").is_err());
        assert!(TrainConfig::from_toml_str("dropout = 1.5").is_err());
        assert!(TrainConfig::from_toml_str("penalty = -1.0").is_err());
    }
}
