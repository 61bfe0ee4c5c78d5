use std::path::Path;

use anyhow::Context;
use discal_core::corpus::SynthConfig;
use discal_core::decoding::DecodeConfig;
use discal_core::distill::{DistillConfig, TrainConfig};
use discal_core::seq2seq::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::Invalid;

/// Every tunable of a run in one JSON file. Missing sections take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    /// Teacher architecture; `vocab_size` is replaced by the vocabulary size.
    pub model: ModelConfig,
    pub teacher: TrainConfig,
    /// Decoder layers kept by the student when no explicit indices are given.
    pub student_decoder_layers: usize,
    pub student_layer_indices: Option<Vec<usize>>,
    pub distill: DistillConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            model: ModelConfig::desk_teacher(1),
            teacher: TrainConfig::default(),
            student_decoder_layers: 1,
            student_layer_indices: None,
            distill: DistillConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| Invalid(format!("config {}: {e}", path.display())))
            .map_err(anyhow::Error::from)
    }

    /// Apply the global seed to every random stream.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.synth.seed = s;
            self.teacher.seed = s;
            self.distill.train.seed = s;
        }
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.teacher.threads = threads;
        self.distill.train.threads = threads;
        self
    }

    /// Check every section before any work starts.
    pub fn validate(&self) -> discal_core::Result<()> {
        self.synth.validate()?;
        ModelConfig {
            vocab_size: self.model.vocab_size.max(1),
            ..self.model.clone()
        }
        .validate()?;
        self.teacher.validate()?;
        self.distill.validate()?;
        self.decode.validate()?;
        if self.student_decoder_layers == 0 {
            return Err(discal_core::Error::InvalidConfig {
                field: "student_decoder_layers".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.distill.train.seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_uses_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"student_decoder_layers": 2}"#).unwrap();
        assert_eq!(c.student_decoder_layers, 2);
        assert_eq!(c.distill, DistillConfig::default());
    }

    #[test]
    fn shipped_desk_config_is_valid() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
        let c = RunConfig::load(Some(&path)).unwrap();
        c.validate().unwrap();
        assert_eq!(c.distill.n, 6);
        assert_eq!(c.model.dropout_rate, 0.1);
    }

    #[test]
    fn seed_reaches_every_section() {
        let c = RunConfig::default().with_seed(Some(5));
        assert_eq!((c.synth.seed, c.teacher.seed, c.distill.train.seed), (5, 5, 5));
    }
}
