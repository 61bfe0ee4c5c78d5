//! Key/value-cached decoding, one token at a time.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::attention::AttentionScale;
use super::layers::{gelu, LayerNorm, Linear};
use super::{Real, Seq2SeqModel};
use crate::error::{Error, Result};
use crate::Token;

#[derive(Debug, Clone)]
struct LayerCache<T> {
    keys: Vec<T>,
    values: Vec<T>,
}

/// Decoder state after consuming a prefix. Cloning is cheap relative to a
/// forward step; cross-attention projections are shared between clones.
#[derive(Debug, Clone)]
pub struct IncrementalState<T> {
    cross: Arc<Vec<(Array2<T>, Array2<T>)>>,
    layers: Vec<LayerCache<T>>,
    scale: AttentionScale,
    position: usize,
}

fn linear_row<T: Real>(l: &Linear<T>, x: &ArrayView1<T>) -> Array1<T> {
    x.dot(&l.weight) + &l.bias
}

fn norm_row<T: Real>(ln: &LayerNorm<T>, x: &Array1<T>) -> Array1<T> {
    let mut out = Array1::zeros(x.len());
    ln.forward_row(x.as_slice().expect("contiguous"), out.as_slice_mut().expect("contiguous"));
    out
}

fn attend_row<T: Real>(q: &Array1<T>, keys: ArrayView2<T>, values: ArrayView2<T>, heads: usize, scale: AttentionScale) -> Array1<T> {
    let d = q.len();
    let dh = d / heads;
    let factor = T::lit(1.0 / (scale.value() * (dh as f64).sqrt()));
    let mut ctx = Array1::zeros(d);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(s![cols.clone()]);
        let kh = keys.slice(s![.., cols.clone()]);
        let mut scores = kh.dot(&qh) * factor;
        let max = scores.fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        scores.mapv_inplace(|v| (v - max).exp());
        let total = scores.sum();
        scores /= total;
        ctx.slice_mut(s![cols.clone()]).assign(&scores.dot(&values.slice(s![.., cols])));
    }
    ctx
}

impl<T: Real> IncrementalState<T> {
    /// Fresh state attending to `memory`, the encoder output for one document.
    pub fn new(model: &Seq2SeqModel<T>, memory: &Array2<T>, scale: AttentionScale) -> Self {
        let cross = model
            .params
            .decoder
            .iter()
            .map(|l| (l.cross_attn.k.forward(memory), l.cross_attn.v.forward(memory)))
            .collect();
        let layers = model
            .params
            .decoder
            .iter()
            .map(|_| LayerCache {
                keys: Vec::new(),
                values: Vec::new(),
            })
            .collect();
        Self {
            cross: Arc::new(cross),
            layers,
            scale,
            position: 0,
        }
    }

    /// Number of tokens consumed so far.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Feed one token and return the log-distribution of the next one.
    pub fn step(&mut self, model: &Seq2SeqModel<T>, token: Token) -> Result<Array1<T>> {
        let cfg = &model.config;
        if self.position >= cfg.max_positions {
            return Err(Error::TooLong {
                len: self.position + 1,
                max: cfg.max_positions,
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::Shape(format!("token {token} outside vocabulary of {}", cfg.vocab_size)));
        }
        let d = cfg.d_model;
        let heads = cfg.num_heads;
        let p = &model.params;
        let mut x = &p.token_embedding.row(token as usize) + &p.decoder_positions.row(self.position);
        let rows = self.position + 1;
        for ((layer, cache), (ck, cv)) in p.decoder.iter().zip(&mut self.layers).zip(self.cross.iter()) {
            let h = norm_row(&layer.ln_self, &x);
            let q = linear_row(&layer.self_attn.q, &h.view());
            cache.keys.extend(linear_row(&layer.self_attn.k, &h.view()));
            cache.values.extend(linear_row(&layer.self_attn.v, &h.view()));
            let keys = ArrayView2::from_shape((rows, d), &cache.keys).expect("cache shape");
            let values = ArrayView2::from_shape((rows, d), &cache.values).expect("cache shape");
            let ctx = attend_row(&q, keys, values, heads, self.scale);
            x += &linear_row(&layer.self_attn.o, &ctx.view());

            let h = norm_row(&layer.ln_cross, &x);
            let q = linear_row(&layer.cross_attn.q, &h.view());
            let ctx = attend_row(&q, ck.view(), cv.view(), heads, self.scale);
            x += &linear_row(&layer.cross_attn.o, &ctx.view());

            let h = norm_row(&layer.ln_ff, &x);
            let act = linear_row(&layer.ff.fc1, &h.view()).mapv(gelu);
            x += &linear_row(&layer.ff.fc2, &act.view());
        }
        self.position += 1;
        let normed = norm_row(&p.decoder_norm, &x);
        Ok(model.lm_head_row(normed.as_slice().expect("contiguous")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::ModelConfig;

    #[test]
    fn matches_full_forward() {
        let cfg = ModelConfig {
            vocab_size: 13,
            d_model: 8,
            num_heads: 2,
            ff_dim: 16,
            encoder_layers: 1,
            decoder_layers: 2,
            max_positions: 12,
            dropout_rate: 0.0,
        };
        let model = Seq2SeqModel::<f64>::new(cfg, 5).unwrap();
        let doc = [4, 5, 6, 7, 8, 9];
        let prefix = [10, 11, 4];
        let scale = AttentionScale::new(1.7).unwrap();
        let full = model.forward_logprobs(&doc, &prefix, scale).unwrap();
        let enc = model.encode(&doc, scale, None).unwrap();
        let mut state = IncrementalState::new(&model, &enc.memory, scale);
        let inputs = [crate::corpus::BOS, 10, 11, 4];
        for (t, &tok) in inputs.iter().enumerate() {
            let lp = state.step(&model, tok).unwrap();
            for (a, b) in lp.iter().zip(full.row(t)) {
                assert!((a - b).abs() < 1e-10, "position {t}: {a} vs {b}");
            }
        }
        assert_eq!(state.position(), 4);
    }

    #[test]
    fn rejects_overflow() {
        let cfg = ModelConfig {
            max_positions: 2,
            ..ModelConfig::desk_teacher(10)
        };
        let model = Seq2SeqModel::<f32>::new(cfg, 1).unwrap();
        let enc = model.encode(&[4, 5], AttentionScale::UNIT, None).unwrap();
        let mut state = IncrementalState::new(&model, &enc.memory, AttentionScale::UNIT);
        state.step(&model, 1).unwrap();
        state.step(&model, 4).unwrap();
        assert!(matches!(state.step(&model, 4), Err(Error::TooLong { .. })));
    }
}
