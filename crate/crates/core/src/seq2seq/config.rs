use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of an encoder-decoder transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Desk-scale teacher: 64-wide, 4 heads, 2 encoder and 2 decoder layers.
    pub fn desk_teacher(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            num_heads: 4,
            ff_dim: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            max_positions: 96,
            dropout_rate: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("ff_dim", self.ff_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("max_positions", self.max_positions),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::config(
                "d_model",
                format!("{} is not divisible by num_heads {}", self.d_model, self.num_heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::desk_teacher(50).validate().is_ok());
        let bad = ModelConfig {
            num_heads: 3,
            ..ModelConfig::desk_teacher(50)
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig { field, .. }) if field == "d_model"));
        let bad = ModelConfig {
            dropout_rate: 1.0,
            ..ModelConfig::desk_teacher(50)
        };
        assert!(bad.validate().is_err());
    }
}
