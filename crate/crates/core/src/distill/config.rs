use std::fmt;

use serde::{Deserialize, Serialize};

use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::seq2seq::AdamConfig;

/// Which targets and objective the student is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    /// Gold summaries only.
    Sft,
    /// One teacher beam-search summary per document.
    SeqDistil,
    /// One teacher summary decoded under a fixed attention scale.
    Plate { temperature: f64 },
    /// Ranked pseudo summaries regenerated during training.
    Discal,
    /// [`MethodKind::Discal`] with an earlier student as teacher and lambda 0.
    DiscalSelf,
}

impl MethodKind {
    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Sft => "SFT",
            MethodKind::SeqDistil => "Seq-Distil",
            MethodKind::Plate { .. } => "PLATE",
            MethodKind::Discal => "DisCal",
            MethodKind::DiscalSelf => "DisCal-Self",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodKind::Plate { temperature } => write!(f, "PLATE(k={temperature})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Optimization settings shared by teacher training and distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub label_smoothing: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Worker threads for per-document work inside a batch.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 16,
            warmup_steps: 100,
            label_smoothing: 0.1,
            optimizer: AdamConfig::default(),
            seed: 17,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing", "must lie in [0, 1)"));
        }
        self.optimizer.validate()
    }

    /// Linear warmup to the base rate, then linear decay towards zero.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let base = self.optimizer.learning_rate;
        if step < self.warmup_steps {
            return base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let rest = (self.steps - self.warmup_steps).max(1) as f64;
        base * (1.0 - (step - self.warmup_steps) as f64 / rest).max(0.0)
    }
}

/// Hyperparameters of distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Weight of abstractiveness against informativeness when ranking.
    pub lambda: f64,
    /// Upper end of the attention-scale range.
    pub gamma: f64,
    /// Weight of the NLL term.
    pub eta: f64,
    /// Pseudo summaries per document.
    pub n: usize,
    pub margin_m: f64,
    /// Length-normalization exponent of the sequence log-probability.
    pub alpha: f64,
    /// Mirror the ranking hinge; see [`crate::distill::pairwise_hinge`].
    pub literal_calibration: bool,
    /// Regenerate pseudo summaries for a document once every this many steps.
    pub regenerate_every: usize,
    /// Teacher decoding for single-target methods and, per group, for pseudo summaries.
    pub generation: DecodeConfig,
    /// Beams within each diverse-search group.
    pub beams_per_group: usize,
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            gamma: 2.0,
            eta: 0.1,
            n: 6,
            margin_m: 0.001,
            alpha: 1.0,
            literal_calibration: false,
            regenerate_every: 1,
            generation: DecodeConfig::default(),
            beams_per_group: 1,
            train: TrainConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda", "must lie in [0, 1]"));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", "must be at least 1"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", "must be non-negative"));
        }
        if self.n < 2 {
            return Err(Error::config("n", "must be at least 2"));
        }
        if !(self.margin_m >= 0.0 && self.margin_m.is_finite()) {
            return Err(Error::config("margin_m", "must be non-negative"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be non-negative"));
        }
        if self.regenerate_every == 0 {
            return Err(Error::config("regenerate_every", "must be positive"));
        }
        if self.beams_per_group == 0 {
            return Err(Error::config("beams_per_group", "must be positive"));
        }
        self.generation.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_and_decays() {
        let c = TrainConfig {
            steps: 10,
            warmup_steps: 2,
            ..TrainConfig::default()
        };
        let lr = c.optimizer.learning_rate;
        assert!((c.learning_rate(0) - lr / 2.0).abs() < 1e-15);
        assert!((c.learning_rate(1) - lr).abs() < 1e-15);
        assert!((c.learning_rate(2) - lr).abs() < 1e-15);
        assert!(c.learning_rate(9) < c.learning_rate(5));
        assert!(c.learning_rate(9) > 0.0);
    }

    #[test]
    fn validation_names_fields() {
        let bad = DistillConfig {
            lambda: 1.5,
            ..DistillConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig { field, .. }) if field == "lambda"));
        let bad = DistillConfig {
            n: 1,
            ..DistillConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig { field, .. }) if field == "n"));
        assert!(DistillConfig::default().validate().is_ok());
    }

    #[test]
    fn method_serialization() {
        let m = MethodKind::Plate { temperature: 1.5 };
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"kind":"plate","temperature":1.5}"#);
        assert_eq!(serde_json::from_str::<MethodKind>(&json).unwrap(), m);
        assert_eq!(MethodKind::SeqDistil.to_string(), "Seq-Distil");
    }
}
