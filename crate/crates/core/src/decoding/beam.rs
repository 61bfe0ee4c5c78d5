use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Decoder;
use crate::corpus::EOS;
use crate::error::{Error, Result};
use crate::Token;

/// Search settings shared by beam and diverse beam search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub num_groups: usize,
    pub diversity_strength: f64,
    pub length_penalty: f64,
    /// Fewest tokens before the end token may be emitted.
    pub min_length: usize,
    /// Most tokens in a hypothesis, end token included.
    pub max_length: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            num_groups: 1,
            diversity_strength: 0.5,
            length_penalty: 1.0,
            min_length: 8,
            max_length: 24,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::config("beam_size", "must be positive"));
        }
        if self.num_groups == 0 || !self.beam_size.is_multiple_of(self.num_groups) {
            return Err(Error::config(
                "num_groups",
                format!("must be positive and divide beam_size {}", self.beam_size),
            ));
        }
        if !(self.diversity_strength >= 0.0) {
            return Err(Error::config("diversity_strength", "must be non-negative"));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::config("length_penalty", "must be finite"));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(Error::config("min_length", "must lie in [1, max_length]"));
        }
        Ok(())
    }

    pub fn beams_per_group(&self) -> usize {
        self.beam_size / self.num_groups
    }
}

/// One finished search hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    /// Emitted tokens, ending with the end token unless `forced`.
    pub tokens: Vec<Token>,
    /// Sum of the model log-probabilities of `tokens`.
    pub cumulative_logprob: f64,
    pub finished: bool,
    /// Stopped by `max_length` rather than by emitting the end token.
    pub forced: bool,
}

impl BeamHypothesis {
    /// `cumulative_logprob / |tokens|^length_penalty`.
    pub fn score(&self, length_penalty: f64) -> f64 {
        self.cumulative_logprob / (self.tokens.len() as f64).powf(length_penalty)
    }

    /// Tokens without the trailing end token.
    pub fn content(&self) -> &[Token] {
        match self.tokens.last() {
            Some(&EOS) if !self.forced => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

struct Live<S> {
    tokens: Vec<Token>,
    cum: f64,
    state: S,
    next: Vec<f64>,
}

struct Group<S> {
    live: Vec<Live<S>>,
    finished: Vec<BeamHypothesis>,
}

struct Candidate {
    selection: f64,
    beam: usize,
    token: Token,
    logprob: f64,
}

fn by_selection(a: &Candidate, b: &Candidate) -> Ordering {
    b.selection
        .total_cmp(&a.selection)
        .then(a.beam.cmp(&b.beam))
        .then(a.token.cmp(&b.token))
}

/// Run `num_groups` synchronized beam searches. Group `g` pays
/// `diversity_strength` per earlier group that chose the same token at the
/// same step. Returns each group's hypotheses, best first.
pub fn group_beam_search<D: Decoder>(decoder: &D, config: &DecodeConfig) -> Result<Vec<Vec<BeamHypothesis>>> {
    config.validate()?;
    if config.max_length > decoder.max_tokens() {
        return Err(Error::TooLong {
            len: config.max_length,
            max: decoder.max_tokens(),
        });
    }
    let width = config.beams_per_group();
    let (state, next) = decoder.start()?;
    let mut groups: Vec<Group<D::State>> = (0..config.num_groups)
        .map(|_| Group {
            live: vec![Live {
                tokens: Vec::new(),
                cum: 0.0,
                state: state.clone(),
                next: next.clone(),
            }],
            finished: Vec::new(),
        })
        .collect();
    let vocab = next.len();

    while groups.iter().any(|g| !g.live.is_empty()) {
        let mut used = vec![0usize; vocab];
        for group in &mut groups {
            let slots = width - group.finished.len();
            if group.live.is_empty() || slots == 0 {
                group.live.clear();
                continue;
            }
            let mut candidates = Vec::with_capacity(group.live.len() * vocab);
            for (b, beam) in group.live.iter().enumerate() {
                let end_allowed = beam.tokens.len() >= config.min_length;
                for (t, &lp) in beam.next.iter().enumerate() {
                    let token = t as Token;
                    if lp == f64::NEG_INFINITY || (token == EOS && !end_allowed) {
                        continue;
                    }
                    if lp.is_nan() {
                        return Err(Error::NonFinite("decoder log-probability".into()));
                    }
                    candidates.push(Candidate {
                        selection: beam.cum + lp - config.diversity_strength * used[t] as f64,
                        beam: b,
                        token,
                        logprob: lp,
                    });
                }
            }
            candidates.sort_unstable_by(by_selection);
            candidates.truncate(slots);
            let mut live = Vec::with_capacity(slots);
            for c in &candidates {
                used[c.token as usize] += 1;
                let parent = &group.live[c.beam];
                let mut tokens = parent.tokens.clone();
                tokens.push(c.token);
                let cum = parent.cum + c.logprob;
                let ended = c.token == EOS;
                if ended || tokens.len() == config.max_length {
                    group.finished.push(BeamHypothesis {
                        tokens,
                        cumulative_logprob: cum,
                        finished: true,
                        forced: !ended,
                    });
                } else {
                    let mut state = parent.state.clone();
                    let next = decoder.advance(&mut state, c.token)?;
                    live.push(Live { tokens, cum, state, next });
                }
            }
            group.live = live;
        }
    }

    Ok(groups
        .into_iter()
        .map(|g| {
            let mut done = g.finished;
            done.sort_by(|a, b| b.score(config.length_penalty).total_cmp(&a.score(config.length_penalty)));
            done
        })
        .collect())
}

/// Standard beam search; hypotheses best first by length-normalized score.
pub fn beam_search<D: Decoder>(decoder: &D, config: &DecodeConfig) -> Result<Vec<BeamHypothesis>> {
    if config.num_groups != 1 {
        return Err(Error::config("num_groups", "beam search needs a single group"));
    }
    let mut groups = group_beam_search(decoder, config)?;
    Ok(groups.pop().unwrap_or_default())
}

/// The best hypothesis of every group, in group order.
pub fn diverse_beam_search<D: Decoder>(decoder: &D, config: &DecodeConfig) -> Result<Vec<BeamHypothesis>> {
    let groups = group_beam_search(decoder, config)?;
    groups
        .into_iter()
        .map(|g| g.into_iter().next().ok_or(Error::Empty("beam group produced no hypothesis")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{greedy_decode, FnDecoder};

    const A: Token = 4;
    const B: Token = 5;

    fn dist(pairs: &[(Token, f64)], vocab: usize) -> Vec<f64> {
        let mut v = vec![f64::NEG_INFINITY; vocab];
        for &(t, p) in pairs {
            v[t as usize] = p.ln();
        }
        v
    }

    fn cfg(beam: usize, min: usize, max: usize, lp: f64) -> DecodeConfig {
        DecodeConfig {
            beam_size: beam,
            num_groups: 1,
            diversity_strength: 0.0,
            length_penalty: lp,
            min_length: min,
            max_length: max,
        }
    }

    fn enumerate(prefix: &mut Vec<Token>, max: usize, min: usize, f: &dyn Fn(&[Token]) -> Vec<f64>, out: &mut Vec<(Vec<Token>, f64)>, cum: f64) {
        let lp = f(prefix);
        for (t, &p) in lp.iter().enumerate() {
            let t = t as Token;
            if p == f64::NEG_INFINITY || (t == EOS && prefix.len() < min) {
                continue;
            }
            prefix.push(t);
            if t == EOS || prefix.len() == max {
                out.push((prefix.clone(), cum + p));
            } else {
                enumerate(prefix, max, min, f, out, cum + p);
            }
            prefix.pop();
        }
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let table = |_: &[Token]| dist(&[(A, 0.7), (EOS, 0.3)], 6);
        for lp in [0.0, 0.5, 1.0, 2.0] {
            let mut all = Vec::new();
            enumerate(&mut Vec::new(), 3, 1, &table, &mut all, 0.0);
            let best = all
                .iter()
                .map(|(t, c)| (t.clone(), c / (t.len() as f64).powf(lp)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            let hyps = beam_search(&FnDecoder::new(table, 8), &cfg(4, 1, 3, lp)).unwrap();
            assert_eq!(hyps[0].tokens, best.0, "lp={lp}");
            assert!((hyps[0].score(lp) - best.1).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_one_is_greedy() {
        let table = |p: &[Token]| match p.len() {
            0 => dist(&[(A, 0.5), (B, 0.4), (EOS, 0.1)], 6),
            1 => dist(&[(A, 0.2), (B, 0.3), (EOS, 0.5)], 6),
            _ => dist(&[(EOS, 0.9), (A, 0.1)], 6),
        };
        let dec = FnDecoder::new(table, 8);
        for min in 1..3 {
            let hyps = beam_search(&dec, &cfg(1, min, 5, 1.0)).unwrap();
            assert_eq!(hyps[0].tokens, greedy_decode(&dec, min, 5, EOS).unwrap());
        }
    }

    #[test]
    fn zero_length_penalty_ranks_by_sum() {
        let table = |p: &[Token]| {
            if p.is_empty() {
                dist(&[(A, 0.6), (B, 0.4)], 6)
            } else {
                dist(&[(EOS, 0.5), (A, 0.25), (B, 0.25)], 6)
            }
        };
        let hyps = beam_search(&FnDecoder::new(table, 8), &cfg(6, 1, 4, 0.0)).unwrap();
        for w in hyps.windows(2) {
            assert!(w[0].cumulative_logprob >= w[1].cumulative_logprob);
        }
    }

    #[test]
    fn end_token_masked_before_min_length() {
        let table = |_: &[Token]| dist(&[(EOS, 0.9), (A, 0.1)], 6);
        let hyps = beam_search(&FnDecoder::new(table, 8), &cfg(2, 3, 6, 1.0)).unwrap();
        for h in &hyps {
            assert!(h.tokens[..3].iter().all(|&t| t != EOS));
            assert!(h.content().len() >= 3);
        }
    }

    #[test]
    fn forced_finish_when_end_never_wins() {
        let table = |_: &[Token]| dist(&[(A, 1.0)], 6);
        let hyps = beam_search(&FnDecoder::new(table, 8), &cfg(2, 1, 4, 1.0)).unwrap();
        assert_eq!(hyps[0].tokens, vec![A; 4]);
        assert!(hyps[0].forced && hyps[0].finished);
        assert_eq!(hyps[0].content().len(), 4);
    }

    #[test]
    fn hamming_penalty_separates_groups() {
        let table = |_: &[Token]| dist(&[(A, 0.6), (B, 0.3), (EOS, 0.1)], 6);
        let dec = FnDecoder::new(table, 8);
        let c = DecodeConfig {
            beam_size: 2,
            num_groups: 2,
            diversity_strength: 5.0,
            length_penalty: 1.0,
            min_length: 1,
            max_length: 3,
        };
        let hyps = diverse_beam_search(&dec, &c).unwrap();
        assert_eq!(hyps.len(), 2);
        assert_ne!(hyps[0].tokens[0], hyps[1].tokens[0]);
        let recomputed: f64 = hyps[1].tokens.iter().map(|&t| table(&[])[t as usize]).sum();
        assert!((hyps[1].cumulative_logprob - recomputed).abs() < 1e-12);
    }

    #[test]
    fn single_group_without_penalty_equals_beam_search() {
        let table = |p: &[Token]| dist(&[(A, 0.5 - 0.1 * p.len() as f64), (B, 0.3), (EOS, 0.2 + 0.1 * p.len() as f64)], 6);
        let dec = FnDecoder::new(table, 8);
        let c = cfg(3, 1, 4, 1.0);
        assert_eq!(diverse_beam_search(&dec, &c).unwrap()[0], beam_search(&dec, &c).unwrap()[0]);
    }

    #[test]
    fn rejects_bad_config() {
        let dec = FnDecoder::new(|_: &[Token]| dist(&[(A, 1.0)], 6), 4);
        assert!(beam_search(&dec, &cfg(2, 1, 5, 1.0)).is_err());
        assert!(beam_search(&dec, &cfg(0, 1, 3, 1.0)).is_err());
        assert!(beam_search(&dec, &cfg(2, 4, 3, 1.0)).is_err());
        let c = DecodeConfig {
            beam_size: 3,
            num_groups: 2,
            ..DecodeConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
