//! Pre-norm encoder-decoder transformer with hand-written backward passes.
//!
//! Training code runs one document at a time: [`Seq2SeqModel::encode`]
//! once, then [`Seq2SeqModel::decode`] for every target sequence that
//! shares the document. Backward mirrors that split so several targets
//! can accumulate into a single encoder gradient.

use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{AttentionCache, AttentionScale};
use super::layers::{init_embedding, AttentionWeights, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache, Linear, Visit};
use super::{ModelConfig, Real};
use crate::corpus::BOS;
use crate::error::{Error, Result};
use crate::Token;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub ln_attn: LayerNorm<T>,
    pub attn: AttentionWeights<T>,
    pub ln_ff: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub ln_self: LayerNorm<T>,
    pub self_attn: AttentionWeights<T>,
    pub ln_cross: LayerNorm<T>,
    pub cross_attn: AttentionWeights<T>,
    pub ln_ff: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

/// Every trainable tensor of the model. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub token_embedding: Array2<T>,
    pub encoder_positions: Array2<T>,
    pub decoder_positions: Array2<T>,
    pub encoder: Vec<EncoderLayer<T>>,
    pub encoder_norm: LayerNorm<T>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub decoder_norm: LayerNorm<T>,
    pub lm_head: Linear<T>,
}

impl<T: Real> EncoderLayer<T> {
    fn zeros(c: &ModelConfig) -> Self {
        Self {
            ln_attn: LayerNorm::zeros(c.d_model),
            attn: AttentionWeights::zeros(c.d_model),
            ln_ff: LayerNorm::zeros(c.d_model),
            ff: FeedForward::zeros(c.d_model, c.ff_dim),
        }
    }

    fn init<R: Rng>(c: &ModelConfig, out_gain: f64, rng: &mut R) -> Self {
        Self {
            ln_attn: LayerNorm::new(c.d_model),
            attn: AttentionWeights::init(c.d_model, out_gain, rng),
            ln_ff: LayerNorm::new(c.d_model),
            ff: FeedForward::init(c.d_model, c.ff_dim, out_gain, rng),
        }
    }

    fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> EncoderLayer<U> {
        EncoderLayer {
            ln_attn: self.ln_attn.map(f),
            attn: self.attn.map(f),
            ln_ff: self.ln_ff.map(f),
            ff: self.ff.map(f),
        }
    }
}

impl<T: Real> Visit<T> for EncoderLayer<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &[usize], &[T])) {
        self.ln_attn.visit(&format!("{p}.ln_attn"), f);
        self.attn.visit(&format!("{p}.self_attn"), f);
        self.ln_ff.visit(&format!("{p}.ln_ff"), f);
        self.ff.visit(&format!("{p}.ff"), f);
    }

    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &[usize], &mut [T])) {
        self.ln_attn.visit_mut(&format!("{p}.ln_attn"), f);
        self.attn.visit_mut(&format!("{p}.self_attn"), f);
        self.ln_ff.visit_mut(&format!("{p}.ln_ff"), f);
        self.ff.visit_mut(&format!("{p}.ff"), f);
    }
}

impl<T: Real> DecoderLayer<T> {
    fn zeros(c: &ModelConfig) -> Self {
        Self {
            ln_self: LayerNorm::zeros(c.d_model),
            self_attn: AttentionWeights::zeros(c.d_model),
            ln_cross: LayerNorm::zeros(c.d_model),
            cross_attn: AttentionWeights::zeros(c.d_model),
            ln_ff: LayerNorm::zeros(c.d_model),
            ff: FeedForward::zeros(c.d_model, c.ff_dim),
        }
    }

    fn init<R: Rng>(c: &ModelConfig, out_gain: f64, rng: &mut R) -> Self {
        Self {
            ln_self: LayerNorm::new(c.d_model),
            self_attn: AttentionWeights::init(c.d_model, out_gain, rng),
            ln_cross: LayerNorm::new(c.d_model),
            cross_attn: AttentionWeights::init(c.d_model, out_gain, rng),
            ln_ff: LayerNorm::new(c.d_model),
            ff: FeedForward::init(c.d_model, c.ff_dim, out_gain, rng),
        }
    }

    fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> DecoderLayer<U> {
        DecoderLayer {
            ln_self: self.ln_self.map(f),
            self_attn: self.self_attn.map(f),
            ln_cross: self.ln_cross.map(f),
            cross_attn: self.cross_attn.map(f),
            ln_ff: self.ln_ff.map(f),
            ff: self.ff.map(f),
        }
    }
}

impl<T: Real> Visit<T> for DecoderLayer<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &[usize], &[T])) {
        self.ln_self.visit(&format!("{p}.ln_self"), f);
        self.self_attn.visit(&format!("{p}.self_attn"), f);
        self.ln_cross.visit(&format!("{p}.ln_cross"), f);
        self.cross_attn.visit(&format!("{p}.cross_attn"), f);
        self.ln_ff.visit(&format!("{p}.ln_ff"), f);
        self.ff.visit(&format!("{p}.ff"), f);
    }

    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &[usize], &mut [T])) {
        self.ln_self.visit_mut(&format!("{p}.ln_self"), f);
        self.self_attn.visit_mut(&format!("{p}.self_attn"), f);
        self.ln_cross.visit_mut(&format!("{p}.ln_cross"), f);
        self.cross_attn.visit_mut(&format!("{p}.cross_attn"), f);
        self.ln_ff.visit_mut(&format!("{p}.ln_ff"), f);
        self.ff.visit_mut(&format!("{p}.ff"), f);
    }
}

fn visit_matrix<T: Real>(name: &str, m: &Array2<T>, f: &mut dyn FnMut(String, &[usize], &[T])) {
    f(name.to_string(), m.shape(), m.as_slice().expect("contiguous"));
}

fn visit_matrix_mut<T: Real>(name: &str, m: &mut Array2<T>, f: &mut dyn FnMut(String, &[usize], &mut [T])) {
    let shape = m.shape().to_vec();
    f(name.to_string(), &shape, m.as_slice_mut().expect("contiguous"));
}

impl<T: Real> Params<T> {
    pub fn zeros(c: &ModelConfig) -> Self {
        Self {
            token_embedding: Array2::zeros((c.vocab_size, c.d_model)),
            encoder_positions: Array2::zeros((c.max_positions, c.d_model)),
            decoder_positions: Array2::zeros((c.max_positions, c.d_model)),
            encoder: (0..c.encoder_layers).map(|_| EncoderLayer::zeros(c)).collect(),
            encoder_norm: LayerNorm::zeros(c.d_model),
            decoder: (0..c.decoder_layers).map(|_| DecoderLayer::zeros(c)).collect(),
            decoder_norm: LayerNorm::zeros(c.d_model),
            lm_head: Linear::zeros(c.d_model, c.vocab_size),
        }
    }

    fn init<R: Rng>(c: &ModelConfig, rng: &mut R) -> Self {
        // Residual-branch outputs are scaled down with depth.
        let out_gain = 1.0 / ((2 * (c.encoder_layers + c.decoder_layers)) as f64).sqrt();
        Self {
            token_embedding: init_embedding(c.vocab_size, c.d_model, 1.0, rng),
            encoder_positions: init_embedding(c.max_positions, c.d_model, 0.5, rng),
            decoder_positions: init_embedding(c.max_positions, c.d_model, 0.5, rng),
            encoder: (0..c.encoder_layers).map(|_| EncoderLayer::init(c, out_gain, rng)).collect(),
            encoder_norm: LayerNorm::new(c.d_model),
            decoder: (0..c.decoder_layers).map(|_| DecoderLayer::init(c, out_gain, rng)).collect(),
            decoder_norm: LayerNorm::new(c.d_model),
            lm_head: Linear::init(c.d_model, c.vocab_size, 1.0, rng),
        }
    }

    /// Visit `(name, shape, data)` for every tensor in manifest order.
    pub fn for_each_tensor(&self, f: &mut dyn FnMut(String, &[usize], &[T])) {
        visit_matrix("embed.tokens", &self.token_embedding, f);
        visit_matrix("embed.encoder_positions", &self.encoder_positions, f);
        visit_matrix("embed.decoder_positions", &self.decoder_positions, f);
        for (i, l) in self.encoder.iter().enumerate() {
            l.visit(&format!("encoder.layers.{i}"), f);
        }
        self.encoder_norm.visit("encoder.norm", f);
        for (i, l) in self.decoder.iter().enumerate() {
            l.visit(&format!("decoder.layers.{i}"), f);
        }
        self.decoder_norm.visit("decoder.norm", f);
        self.lm_head.visit("lm_head", f);
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(String, &[usize], &mut [T])) {
        visit_matrix_mut("embed.tokens", &mut self.token_embedding, f);
        visit_matrix_mut("embed.encoder_positions", &mut self.encoder_positions, f);
        visit_matrix_mut("embed.decoder_positions", &mut self.decoder_positions, f);
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.visit_mut(&format!("encoder.layers.{i}"), f);
        }
        self.encoder_norm.visit_mut("encoder.norm", f);
        for (i, l) in self.decoder.iter_mut().enumerate() {
            l.visit_mut(&format!("decoder.layers.{i}"), f);
        }
        self.decoder_norm.visit_mut("decoder.norm", f);
        self.lm_head.visit_mut("lm_head", f);
    }

    /// `(name, shape)` of every tensor in manifest order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.for_each_tensor(&mut |name, shape, _| out.push((name, shape.to_vec())));
        out
    }

    /// Flattened copies of every tensor in manifest order.
    pub fn flat(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        self.for_each_tensor(&mut |_, _, data| out.push(data.to_vec()));
        out
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |_, _, d| n += d.len());
        n
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> Params<U> {
        Params {
            token_embedding: self.token_embedding.mapv(f),
            encoder_positions: self.encoder_positions.mapv(f),
            decoder_positions: self.decoder_positions.mapv(f),
            encoder: self.encoder.iter().map(|l| l.map(f)).collect(),
            encoder_norm: self.encoder_norm.map(f),
            decoder: self.decoder.iter().map(|l| l.map(f)).collect(),
            decoder_norm: self.decoder_norm.map(f),
            lm_head: self.lm_head.map(f),
        }
    }

    /// `self += other * factor`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params<T>, factor: T) {
        let flat = other.flat();
        let mut idx = 0;
        self.for_each_tensor_mut(&mut |_, _, data| {
            for (d, &o) in data.iter_mut().zip(&flat[idx]) {
                *d += o * factor;
            }
            idx += 1;
        });
    }

    pub fn scale(&mut self, factor: T) {
        self.for_each_tensor_mut(&mut |_, _, data| data.iter_mut().for_each(|d| *d *= factor));
    }

    pub fn squared_norm(&self) -> f64 {
        let mut s = 0.0;
        self.for_each_tensor(&mut |_, _, data| s += data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>());
        s
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut found = None;
        self.for_each_tensor(&mut |name, _, data| {
            if found.is_none() && data.iter().any(|v| !v.is_finite()) {
                found = Some(name);
            }
        });
        found
    }
}

/// Gradient of a scalar loss with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub params: Params<T>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            params: Params::zeros(config),
        }
    }

    pub fn accumulate(&mut self, other: &GradientSet<T>) {
        self.params.add_scaled(&other.params, T::one());
    }

    pub fn scale(&mut self, factor: T) {
        self.params.scale(factor);
    }

    pub fn norm(&self) -> f64 {
        self.params.squared_norm().sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.first_non_finite() {
            Some(name) => Err(Error::NonFinite(format!("gradient of {name}"))),
            None => Ok(()),
        }
    }
}

/// Source of dropout masks; absent during evaluation and decoding.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn dropout_mask<T: Real>(shape: (usize, usize), drop: &mut Option<Dropout<'_>>) -> Option<Array2<T>> {
    let d = drop.as_mut()?;
    if d.rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - d.rate));
    let rate = d.rate;
    Some(Array2::from_shape_simple_fn(shape, || {
        if d.rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    }))
}

fn apply_mask<T: Real>(x: &mut Array2<T>, mask: &Option<Array2<T>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

#[derive(Debug, Clone)]
struct EncoderLayerCache<T> {
    ln_attn: LayerNormCache<T>,
    h_attn: Array2<T>,
    attn: AttentionCache<T>,
    drop_attn: Option<Array2<T>>,
    ln_ff: LayerNormCache<T>,
    h_ff: Array2<T>,
    ff: FeedForwardCache<T>,
    drop_ff: Option<Array2<T>>,
}

#[derive(Debug, Clone)]
struct DecoderLayerCache<T> {
    ln_self: LayerNormCache<T>,
    h_self: Array2<T>,
    self_attn: AttentionCache<T>,
    drop_self: Option<Array2<T>>,
    ln_cross: LayerNormCache<T>,
    h_cross: Array2<T>,
    cross_attn: AttentionCache<T>,
    drop_cross: Option<Array2<T>>,
    ln_ff: LayerNormCache<T>,
    h_ff: Array2<T>,
    ff: FeedForwardCache<T>,
    drop_ff: Option<Array2<T>>,
}

/// Activations of one encoder forward pass.
#[derive(Debug, Clone)]
pub struct EncoderPass<T> {
    tokens: Vec<Token>,
    scale: AttentionScale,
    drop_embed: Option<Array2<T>>,
    layers: Vec<EncoderLayerCache<T>>,
    norm: LayerNormCache<T>,
    /// Final encoder states `[document_len, d_model]`, attended by the decoder.
    pub memory: Array2<T>,
}

/// Activations of one decoder forward pass over a full input sequence.
#[derive(Debug, Clone)]
pub struct DecoderPass<T> {
    inputs: Vec<Token>,
    drop_embed: Option<Array2<T>>,
    layers: Vec<DecoderLayerCache<T>>,
    norm: LayerNormCache<T>,
    normed: Array2<T>,
    /// Row `t` is the log-distribution of the token following `inputs[..=t]`.
    pub logprobs: Array2<T>,
}

/// Encoder-decoder transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel<T = f32> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

fn log_softmax_rows<T: Real>(logits: &mut Array2<T>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        row.mapv_inplace(|v| v - lse);
    }
}

impl<T: Real> Seq2SeqModel<T> {
    /// Randomly initialized model, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Seq2SeqModel<U> {
        Seq2SeqModel {
            config: self.config.clone(),
            params: self.params.map(|v| U::lit(v.as_f64())),
        }
    }

    pub fn zero_grads(&self) -> GradientSet<T> {
        GradientSet::zeros(&self.config)
    }

    fn check_tokens(&self, tokens: &[Token], what: &'static str) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty(what));
        }
        if tokens.len() > self.config.max_positions {
            return Err(Error::TooLong {
                len: tokens.len(),
                max: self.config.max_positions,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Shape(format!(
                "{what} token {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[Token], positions: &Array2<T>) -> Array2<T> {
        let d = self.config.d_model;
        let mut x = Array2::zeros((tokens.len(), d));
        for (t, (mut row, &tok)) in x.rows_mut().into_iter().zip(tokens).enumerate() {
            row.assign(&self.params.token_embedding.row(tok as usize));
            row += &positions.row(t);
        }
        x
    }

    pub fn encode(&self, document: &[Token], scale: AttentionScale, mut drop: Option<Dropout<'_>>) -> Result<EncoderPass<T>> {
        self.check_tokens(document, "document")?;
        let heads = self.config.num_heads;
        let mut x = self.embed(document, &self.params.encoder_positions);
        let drop_embed = dropout_mask(x.dim(), &mut drop);
        apply_mask(&mut x, &drop_embed);
        let mut layers = Vec::with_capacity(self.params.encoder.len());
        for layer in &self.params.encoder {
            let (h_attn, ln_attn) = layer.ln_attn.forward(&x);
            let (mut a, attn) = layer.attn.forward(&h_attn, &h_attn, heads, false, scale);
            let drop_attn = dropout_mask(a.dim(), &mut drop);
            apply_mask(&mut a, &drop_attn);
            x += &a;
            let (h_ff, ln_ff) = layer.ln_ff.forward(&x);
            let (mut f, ff) = layer.ff.forward(&h_ff);
            let drop_ff = dropout_mask(f.dim(), &mut drop);
            apply_mask(&mut f, &drop_ff);
            x += &f;
            layers.push(EncoderLayerCache {
                ln_attn,
                h_attn,
                attn,
                drop_attn,
                ln_ff,
                h_ff,
                ff,
                drop_ff,
            });
        }
        let (memory, norm) = self.params.encoder_norm.forward(&x);
        Ok(EncoderPass {
            tokens: document.to_vec(),
            scale,
            drop_embed,
            layers,
            norm,
            memory,
        })
    }

    /// Run the decoder over `inputs` (which should start with the begin
    /// token) attending to `enc.memory`.
    pub fn decode(&self, enc: &EncoderPass<T>, inputs: &[Token], mut drop: Option<Dropout<'_>>) -> Result<DecoderPass<T>> {
        self.check_tokens(inputs, "decoder input")?;
        let heads = self.config.num_heads;
        let scale = enc.scale;
        let mut x = self.embed(inputs, &self.params.decoder_positions);
        let drop_embed = dropout_mask(x.dim(), &mut drop);
        apply_mask(&mut x, &drop_embed);
        let mut layers = Vec::with_capacity(self.params.decoder.len());
        for layer in &self.params.decoder {
            let (h_self, ln_self) = layer.ln_self.forward(&x);
            let (mut a, self_attn) = layer.self_attn.forward(&h_self, &h_self, heads, true, scale);
            let drop_self = dropout_mask(a.dim(), &mut drop);
            apply_mask(&mut a, &drop_self);
            x += &a;
            let (h_cross, ln_cross) = layer.ln_cross.forward(&x);
            let (mut c, cross_attn) = layer.cross_attn.forward(&h_cross, &enc.memory, heads, false, scale);
            let drop_cross = dropout_mask(c.dim(), &mut drop);
            apply_mask(&mut c, &drop_cross);
            x += &c;
            let (h_ff, ln_ff) = layer.ln_ff.forward(&x);
            let (mut f, ff) = layer.ff.forward(&h_ff);
            let drop_ff = dropout_mask(f.dim(), &mut drop);
            apply_mask(&mut f, &drop_ff);
            x += &f;
            layers.push(DecoderLayerCache {
                ln_self,
                h_self,
                self_attn,
                drop_self,
                ln_cross,
                h_cross,
                cross_attn,
                drop_cross,
                ln_ff,
                h_ff,
                ff,
                drop_ff,
            });
        }
        let (normed, norm) = self.params.decoder_norm.forward(&x);
        let mut logprobs = self.params.lm_head.forward(&normed);
        log_softmax_rows(&mut logprobs);
        Ok(DecoderPass {
            inputs: inputs.to_vec(),
            drop_embed,
            layers,
            norm,
            normed,
            logprobs,
        })
    }

    /// Log-probabilities for every position of `[BOS] + prefix`: row `t`
    /// predicts the token after `prefix[..t]`. Evaluation mode, no dropout.
    pub fn forward_logprobs(&self, document: &[Token], prefix: &[Token], scale: AttentionScale) -> Result<Array2<T>> {
        let enc = self.encode(document, scale, None)?;
        let inputs: Vec<Token> = std::iter::once(BOS).chain(prefix.iter().copied()).collect();
        Ok(self.decode(&enc, &inputs, None)?.logprobs)
    }

    /// Backpropagate `dL/dlogprobs` through the decoder. Parameter
    /// gradients accumulate into `grads`; the gradient with respect to the
    /// encoder memory is returned for [`Self::encode_backward`].
    pub fn decode_backward(&self, enc: &EncoderPass<T>, dec: &DecoderPass<T>, dlogprobs: &Array2<T>, grads: &mut GradientSet<T>) -> Array2<T> {
        let g = &mut grads.params;
        let scale = enc.scale;
        // log-softmax: dz = dlp − softmax · rowsum(dlp)
        let mut dlogits = dlogprobs.clone();
        Zip::from(dlogits.rows_mut()).and(dec.logprobs.rows()).for_each(|mut d, lp| {
            let total = d.sum();
            Zip::from(&mut d).and(&lp).for_each(|x, &l| *x -= l.exp() * total);
        });
        let dnormed = self.params.lm_head.backward(&dec.normed, &dlogits, &mut g.lm_head);
        let mut dx = self.params.decoder_norm.backward(&dec.norm, &dnormed, &mut g.decoder_norm);
        let mut dmemory = Array2::zeros(enc.memory.raw_dim());
        for ((layer, cache), gl) in self.params.decoder.iter().zip(&dec.layers).zip(g.decoder.iter_mut()).rev() {
            // feed-forward block
            let mut df = dx.clone();
            apply_mask(&mut df, &cache.drop_ff);
            let dh = layer.ff.backward(&cache.h_ff, &cache.ff, &df, &mut gl.ff);
            dx += &layer.ln_ff.backward(&cache.ln_ff, &dh, &mut gl.ln_ff);
            // cross-attention block
            let mut dc = dx.clone();
            apply_mask(&mut dc, &cache.drop_cross);
            let (dhq, dmem) = layer.cross_attn.backward(&cache.h_cross, &enc.memory, &cache.cross_attn, &dc, scale, &mut gl.cross_attn);
            dmemory += &dmem;
            dx += &layer.ln_cross.backward(&cache.ln_cross, &dhq, &mut gl.ln_cross);
            // causal self-attention block
            let mut da = dx.clone();
            apply_mask(&mut da, &cache.drop_self);
            let (dq, dkv) = layer.self_attn.backward(&cache.h_self, &cache.h_self, &cache.self_attn, &da, scale, &mut gl.self_attn);
            dx += &layer.ln_self.backward(&cache.ln_self, &(dq + dkv), &mut gl.ln_self);
        }
        apply_mask(&mut dx, &dec.drop_embed);
        for (t, (row, &tok)) in dx.rows().into_iter().zip(&dec.inputs).enumerate() {
            let mut e = g.token_embedding.row_mut(tok as usize);
            e += &row;
            let mut p = g.decoder_positions.row_mut(t);
            p += &row;
        }
        dmemory
    }

    /// Backpropagate `dL/dmemory` through the encoder into `grads`.
    pub fn encode_backward(&self, enc: &EncoderPass<T>, dmemory: &Array2<T>, grads: &mut GradientSet<T>) {
        let g = &mut grads.params;
        let scale = enc.scale;
        let mut dx = self.params.encoder_norm.backward(&enc.norm, dmemory, &mut g.encoder_norm);
        for ((layer, cache), gl) in self.params.encoder.iter().zip(&enc.layers).zip(g.encoder.iter_mut()).rev() {
            let mut df = dx.clone();
            apply_mask(&mut df, &cache.drop_ff);
            let dh = layer.ff.backward(&cache.h_ff, &cache.ff, &df, &mut gl.ff);
            dx += &layer.ln_ff.backward(&cache.ln_ff, &dh, &mut gl.ln_ff);
            let mut da = dx.clone();
            apply_mask(&mut da, &cache.drop_attn);
            let (dq, dkv) = layer.attn.backward(&cache.h_attn, &cache.h_attn, &cache.attn, &da, scale, &mut gl.attn);
            dx += &layer.ln_attn.backward(&cache.ln_attn, &(dq + dkv), &mut gl.ln_attn);
        }
        apply_mask(&mut dx, &enc.drop_embed);
        for (t, (row, &tok)) in dx.rows().into_iter().zip(&enc.tokens).enumerate() {
            let mut e = g.token_embedding.row_mut(tok as usize);
            e += &row;
            let mut p = g.encoder_positions.row_mut(t);
            p += &row;
        }
    }

    /// Log-distribution for one normalized decoder state.
    pub(crate) fn lm_head_row(&self, hidden: &[T]) -> Array1<T> {
        let h = ndarray::ArrayView1::from(hidden);
        let mut logits = h.dot(&self.params.lm_head.weight);
        logits += &self.params.lm_head.bias;
        let max = logits.fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        logits.mapv_inplace(|v| v - lse);
        logits
    }
}

/// Sum `dL/dmemory` contributions collected from several decoder passes.
pub fn sum_memory_grads<T: Real>(parts: impl IntoIterator<Item = Array2<T>>) -> Option<Array2<T>> {
    parts.into_iter().reduce(|mut a, b| {
        a += &b;
        a
    })
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            d_model: 8,
            num_heads: 2,
            ff_dim: 12,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 8,
            dropout_rate: 0.0,
        }
    }

    /// Compare `analytic` against central differences of `loss` for every
    /// parameter. Entries with magnitude below `1e-3` are judged on
    /// absolute error scaled by that floor.
    pub(crate) fn check(model: &Seq2SeqModel<f64>, analytic: &GradientSet<f64>, loss: impl Fn(&Seq2SeqModel<f64>) -> f64) {
        let h = 1e-4;
        let grads = analytic.params.flat();
        let names: Vec<String> = model.params.manifest().into_iter().map(|(n, _)| n).collect();
        let mut probe = model.clone();
        let mut worst = 0.0f64;
        for (ti, name) in names.iter().enumerate() {
            for i in 0..grads[ti].len() {
                let shift = |m: &mut Seq2SeqModel<f64>, delta: f64| {
                    let mut idx = 0;
                    m.params.for_each_tensor_mut(&mut |_, _, data| {
                        if idx == ti {
                            data[i] += delta;
                        }
                        idx += 1;
                    });
                };
                shift(&mut probe, h);
                let up = loss(&probe);
                shift(&mut probe, -2.0 * h);
                let down = loss(&probe);
                shift(&mut probe, h);
                let numeric = (up - down) / (2.0 * h);
                let a = grads[ti][i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
                assert!(rel < 1e-4, "{name}[{i}]: analytic {a} vs numeric {numeric} (rel {rel})");
            }
        }
        assert!(worst.is_finite());
    }
}
