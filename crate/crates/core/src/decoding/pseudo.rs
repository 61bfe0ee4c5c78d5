use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{diverse_beam_search, DecodeConfig, ModelDecoder};
use crate::error::{Error, Result};
use crate::seq2seq::{sample_attention_scale, AttentionScale, Seq2SeqModel};
use crate::Token;

/// Distinct teacher summaries of one document under one attention scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSummarySet {
    pub document_id: String,
    /// Summaries without end tokens, in group order, duplicates removed.
    pub summaries: Vec<Vec<Token>>,
    pub scale_used: AttentionScale,
    /// Fewer than two distinct summaries survived deduplication.
    pub degenerate: bool,
    /// Number of groups that hit `max_length` without ending.
    pub forced: usize,
}

/// Draw `k ~ U(1, gamma)`, run diverse beam search with `n` groups of
/// `config.beams_per_group()` beams under that scale and drop duplicates.
pub fn generate_pseudo_summaries<R: Rng>(
    teacher: &Seq2SeqModel<f32>,
    document_id: &str,
    document: &[Token],
    n: usize,
    gamma: f64,
    config: &DecodeConfig,
    rng: &mut R,
) -> Result<PseudoSummarySet> {
    if n == 0 {
        return Err(Error::config("n", "must be positive"));
    }
    let scale = sample_attention_scale(gamma, rng)?;
    let search = DecodeConfig {
        beam_size: n * config.beams_per_group(),
        num_groups: n,
        ..config.clone()
    };
    let decoder = ModelDecoder::new(teacher, document, scale)?;
    let hyps = diverse_beam_search(&decoder, &search)?;
    let forced = hyps.iter().filter(|h| h.forced).count();
    let mut summaries: Vec<Vec<Token>> = Vec::with_capacity(n);
    for h in hyps {
        let s = h.content().to_vec();
        if !summaries.contains(&s) {
            summaries.push(s);
        }
    }
    Ok(PseudoSummarySet {
        document_id: document_id.to_string(),
        degenerate: summaries.len() < 2,
        summaries,
        scale_used: scale,
        forced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Seq2SeqModel<f32> {
        let cfg = ModelConfig {
            vocab_size: 12,
            d_model: 8,
            num_heads: 2,
            ff_dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 16,
            dropout_rate: 0.0,
        };
        Seq2SeqModel::new(cfg, 11).unwrap()
    }

    fn decode_cfg() -> DecodeConfig {
        DecodeConfig {
            beam_size: 1,
            num_groups: 1,
            diversity_strength: 1.0,
            length_penalty: 1.0,
            min_length: 2,
            max_length: 6,
        }
    }

    #[test]
    fn deterministic_without_scale_range() {
        let m = model();
        let before = m.clone();
        let doc = [4, 5, 6, 7, 8];
        let a = generate_pseudo_summaries(&m, "d", &doc, 4, 1.0, &decode_cfg(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate_pseudo_summaries(&m, "d", &doc, 4, 1.0, &decode_cfg(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scale_used, AttentionScale::UNIT);
        assert_eq!(m, before);
        for s in &a.summaries {
            assert!((2..=6).contains(&s.len()));
        }
        let distinct: std::collections::HashSet<_> = a.summaries.iter().collect();
        assert_eq!(distinct.len(), a.summaries.len());
        assert_eq!(a.degenerate, a.summaries.len() < 2);
    }

    #[test]
    fn scale_varies_with_seed() {
        let m = model();
        let doc = [4, 5, 6];
        let a = generate_pseudo_summaries(&m, "d", &doc, 2, 2.0, &decode_cfg(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate_pseudo_summaries(&m, "d", &doc, 2, 2.0, &decode_cfg(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a.scale_used, b.scale_used);
        assert!(generate_pseudo_summaries(&m, "d", &doc, 2, 0.5, &decode_cfg(), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn single_group_is_degenerate() {
        let m = model();
        let set = generate_pseudo_summaries(&m, "d", &[4, 5], 1, 1.0, &decode_cfg(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(set.degenerate);
        assert_eq!(set.summaries.len(), 1);
    }
}
