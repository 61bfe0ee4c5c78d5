//! Beam search, Hamming-diverse beam search and the pseudo-summary generator.

mod beam;
mod pseudo;

use ndarray::Array2;

use crate::corpus::BOS;
use crate::error::Result;
use crate::seq2seq::{AttentionScale, IncrementalState, Seq2SeqModel};
use crate::Token;

pub use beam::{beam_search, diverse_beam_search, group_beam_search, BeamHypothesis, DecodeConfig};
pub use pseudo::{generate_pseudo_summaries, PseudoSummarySet};

/// An autoregressive next-token distribution for one fixed source.
pub trait Decoder {
    type State: Clone;

    /// State after the begin token, with the log-distribution of the first token.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    /// Append `token` and return the log-distribution of the one after it.
    fn advance(&self, state: &mut Self::State, token: Token) -> Result<Vec<f64>>;

    /// Longest hypothesis, end token included, this decoder can score.
    fn max_tokens(&self) -> usize;
}

/// A transformer decoding one encoded document.
pub struct ModelDecoder<'a> {
    model: &'a Seq2SeqModel<f32>,
    memory: Array2<f32>,
    scale: AttentionScale,
}

impl<'a> ModelDecoder<'a> {
    pub fn new(model: &'a Seq2SeqModel<f32>, document: &[Token], scale: AttentionScale) -> Result<Self> {
        let memory = model.encode(document, scale, None)?.memory;
        Ok(Self { model, memory, scale })
    }
}

fn widen(lp: ndarray::Array1<f32>) -> Vec<f64> {
    lp.iter().map(|&v| v as f64).collect()
}

impl Decoder for ModelDecoder<'_> {
    type State = IncrementalState<f32>;

    fn start(&self) -> Result<(Self::State, Vec<f64>)> {
        let mut state = IncrementalState::new(self.model, &self.memory, self.scale);
        let lp = state.step(self.model, BOS)?;
        Ok((state, widen(lp)))
    }

    fn advance(&self, state: &mut Self::State, token: Token) -> Result<Vec<f64>> {
        Ok(widen(state.step(self.model, token)?))
    }

    fn max_tokens(&self) -> usize {
        self.model.config.max_positions
    }
}

/// A decoder defined by a function from the current prefix to log-probabilities.
pub struct FnDecoder<F> {
    f: F,
    max_tokens: usize,
}

impl<F: Fn(&[Token]) -> Vec<f64>> FnDecoder<F> {
    pub fn new(f: F, max_tokens: usize) -> Self {
        Self { f, max_tokens }
    }
}

impl<F: Fn(&[Token]) -> Vec<f64>> Decoder for FnDecoder<F> {
    type State = Vec<Token>;

    fn start(&self) -> Result<(Vec<Token>, Vec<f64>)> {
        Ok((Vec::new(), (self.f)(&[])))
    }

    fn advance(&self, state: &mut Vec<Token>, token: Token) -> Result<Vec<f64>> {
        state.push(token);
        Ok((self.f)(state))
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }
}

/// Argmax decoding: at every step take the most likely allowed token.
pub fn greedy_decode<D: Decoder>(decoder: &D, min_length: usize, max_length: usize, end: Token) -> Result<Vec<Token>> {
    let (mut state, mut lp) = decoder.start()?;
    let mut out = Vec::new();
    while out.len() < max_length {
        let best = lp
            .iter()
            .enumerate()
            .filter(|&(t, _)| !(t as Token == end && out.len() < min_length))
            .fold((0usize, f64::NEG_INFINITY), |acc, (t, &v)| if v > acc.1 { (t, v) } else { acc })
            .0 as Token;
        out.push(best);
        if best == end || out.len() == max_length {
            break;
        }
        lp = decoder.advance(&mut state, best)?;
    }
    Ok(out)
}
