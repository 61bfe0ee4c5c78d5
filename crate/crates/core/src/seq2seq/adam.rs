use serde::{Deserialize, Serialize};

use super::model::{GradientSet, Params};
use super::{ModelConfig, Real};
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: Some(1.0),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if matches!(self.max_grad_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::config("max_grad_norm", "must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Params<T>,
    v: Params<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            m: Params::zeros(config),
            v: Params::zeros(config),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update with learning rate `lr`. Returns the gradient norm
    /// measured before clipping.
    pub fn update(&mut self, cfg: &AdamConfig, lr: f64, params: &mut Params<T>, grads: &GradientSet<T>) -> Result<f64> {
        grads.check_finite()?;
        let norm = grads.norm();
        let clip = match cfg.max_grad_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one, clip) = (T::one(), T::lit(clip));
        let step_size = T::lit(lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(cfg.epsilon);
        let decay = T::lit(1.0 - lr * cfg.weight_decay);

        let g = grads.params.flat();
        let m_all = {
            let mut out = Vec::with_capacity(g.len());
            let mut idx = 0;
            self.m.for_each_tensor_mut(&mut |_, _, m| {
                for (mi, &gi) in m.iter_mut().zip(&g[idx]) {
                    *mi = b1 * *mi + (one - b1) * gi * clip;
                }
                out.push(m.to_vec());
                idx += 1;
            });
            out
        };
        let v_all = {
            let mut out = Vec::with_capacity(g.len());
            let mut idx = 0;
            self.v.for_each_tensor_mut(&mut |_, _, v| {
                for (vi, &gi) in v.iter_mut().zip(&g[idx]) {
                    let gc = gi * clip;
                    *vi = b2 * *vi + (one - b2) * gc * gc;
                }
                out.push(v.to_vec());
                idx += 1;
            });
            out
        };
        let mut idx = 0;
        params.for_each_tensor_mut(&mut |_, _, p| {
            for ((pi, &mi), &vi) in p.iter_mut().zip(&m_all[idx]).zip(&v_all[idx]) {
                *pi = *pi * decay - step_size * mi / (vi.sqrt() / bc2_sqrt + eps);
            }
            idx += 1;
        });
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite(format!("parameter {name} after update")));
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::Seq2SeqModel;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            d_model: 4,
            num_heads: 1,
            ff_dim: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 4,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = tiny();
        let mut model = Seq2SeqModel::<f64>::new(cfg.clone(), 0).unwrap();
        let before = model.params.clone();
        let mut grads = GradientSet::zeros(&cfg);
        grads.params.lm_head.bias[2] = 0.5;
        grads.params.lm_head.bias[3] = -3.0;
        let opt = AdamConfig {
            weight_decay: 0.0,
            max_grad_norm: None,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&cfg);
        state.update(&opt, 0.01, &mut model.params, &grads).unwrap();
        let b0 = &before.lm_head.bias;
        let b1 = &model.params.lm_head.bias;
        assert!((b0[2] - b1[2] - 0.01).abs() < 1e-6);
        assert!((b1[3] - b0[3] - 0.01).abs() < 1e-6);
        assert_eq!(b0[1], b1[1]);
        assert_eq!(state.steps_taken(), 1);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let cfg = tiny();
        let mut model = Seq2SeqModel::<f64>::new(cfg.clone(), 0).unwrap();
        let w0 = model.params.lm_head.weight[[0, 0]];
        let grads = GradientSet::zeros(&cfg);
        let opt = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        AdamState::new(&cfg).update(&opt, 0.5, &mut model.params, &grads).unwrap();
        assert!((model.params.lm_head.weight[[0, 0]] - w0 * 0.95).abs() < 1e-12);
    }

    #[test]
    fn rejects_nan_gradient() {
        let cfg = tiny();
        let mut model = Seq2SeqModel::<f32>::new(cfg.clone(), 0).unwrap();
        let mut grads = GradientSet::zeros(&cfg);
        grads.params.decoder_norm.gamma[0] = f32::NAN;
        let err = AdamState::new(&cfg).update(&AdamConfig::default(), 0.1, &mut model.params, &grads);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
