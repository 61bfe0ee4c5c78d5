//! Informativeness and abstractiveness metrics over token ids, plus the
//! calibration score used to rank candidate summaries.
//!
//! All n-grams are contiguous windows over token ids. There is no stemming,
//! stopword removal or sentence splitting, so every value here is exact and
//! reproducible.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Token;

fn ngram_counts(tokens: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window).or_insert(0) += 1;
    }
    counts
}

fn f1(overlap: f64, candidate_total: f64, reference_total: f64) -> f64 {
    if overlap == 0.0 || candidate_total == 0.0 || reference_total == 0.0 {
        return 0.0;
    }
    let precision = overlap / candidate_total;
    let recall = overlap / reference_total;
    2.0 * precision * recall / (precision + recall)
}

/// ROUGE-N F1 with clipped n-gram counts. Returns 0 when either side has
/// fewer than `n` tokens.
pub fn rouge_n_f1(candidate: &[Token], reference: &[Token], n: usize) -> f64 {
    assert!(n >= 1, "rouge_n_f1 requires n >= 1");
    if candidate.len() < n || reference.len() < n {
        return 0.0;
    }
    let cand = ngram_counts(candidate, n);
    let reference_counts = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(reference_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    f1(
        overlap as f64,
        (candidate.len() - n + 1) as f64,
        (reference.len() - n + 1) as f64,
    )
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) memory.
pub fn lcs_len(a: &[Token], b: &[Token]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over whole sequences.
pub fn rouge_l_f1(candidate: &[Token], reference: &[Token]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    f1(lcs as f64, candidate.len() as f64, reference.len() as f64)
}

/// Fraction of the summary's n-gram positions whose n-gram never occurs
/// contiguously in the document. Summaries shorter than `n` score 0.
pub fn novel_ngram_ratio(summary: &[Token], document: &[Token], n: usize) -> f64 {
    assert!(n >= 1, "novel_ngram_ratio requires n >= 1");
    if summary.len() < n {
        return 0.0;
    }
    let seen: HashSet<&[Token]> = if document.len() >= n {
        document.windows(n).collect()
    } else {
        HashSet::new()
    };
    let total = summary.len() - n + 1;
    let novel = summary.windows(n).filter(|w| !seen.contains(w)).count();
    novel as f64 / total as f64
}

/// Mean of ROUGE-1, ROUGE-2 and ROUGE-L F1 against the gold summary.
pub fn informativeness(candidate: &[Token], gold: &[Token]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Empty("gold summary"));
    }
    Ok((rouge_n_f1(candidate, gold, 1) + rouge_n_f1(candidate, gold, 2) + rouge_l_f1(candidate, gold))
        / 3.0)
}

/// Mean of the novel 1-, 3- and 5-gram ratios against the source document.
pub fn abstractiveness(candidate: &[Token], document: &[Token]) -> Result<f64> {
    if document.is_empty() {
        return Err(Error::Empty("document"));
    }
    Ok((novel_ngram_ratio(candidate, document, 1)
        + novel_ngram_ratio(candidate, document, 3)
        + novel_ngram_ratio(candidate, document, 5))
        / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSummary {
    pub summary: Vec<Token>,
    /// Position of this candidate in the input list.
    pub original_index: usize,
    pub s_info: f64,
    pub s_abs: f64,
    pub s_calib: f64,
    /// 1-based position in the ascending order; the best candidate has rank n.
    pub rank: usize,
    /// Length-normalized student log-probability, filled in during training.
    pub student_logprob: Option<f64>,
}

/// Candidates sorted ascending by calibration score; the last entry is best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSummaryList {
    pub entries: Vec<ScoredSummary>,
}

impl RankedSummaryList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&ScoredSummary> {
        self.entries.last()
    }

    /// Candidate indices (into the original list) from worst to best.
    pub fn permutation(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.original_index).collect()
    }
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    if sum > 0.0 {
        values.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / values.len() as f64; values.len()]
    }
}

/// Combine raw `(s_info, s_abs)` pairs into calibration scores and rank
/// them. Each family is normalized by its sum over the set (uniform `1/n`
/// when that sum is zero). Ties keep input order, so the earlier index ends
/// up ranked worse.
pub fn rank_raw_scores(raw: &[(f64, f64)], lambda: f64) -> Vec<(usize, f64, usize)> {
    let info: Vec<f64> = raw.iter().map(|r| r.0).collect();
    let abs: Vec<f64> = raw.iter().map(|r| r.1).collect();
    let info = normalize(&info);
    let abs = normalize(&abs);
    let calib: Vec<f64> = info
        .iter()
        .zip(&abs)
        .map(|(i, a)| (1.0 - lambda) * i + lambda * a)
        .collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| calib[a].total_cmp(&calib[b]));
    order
        .into_iter()
        .enumerate()
        .map(|(pos, idx)| (idx, calib[idx], pos + 1))
        .collect()
}

/// Score every candidate and return them ranked ascending by `s_calib`.
pub fn calibration_scores(
    candidates: &[Vec<Token>],
    gold: &[Token],
    document: &[Token],
    lambda: f64,
) -> Result<RankedSummaryList> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("lambda", format!("{lambda} not in [0, 1]")));
    }
    let raw = candidates
        .iter()
        .map(|c| Ok((informativeness(c, gold)?, abstractiveness(c, document)?)))
        .collect::<Result<Vec<_>>>()?;
    let entries = rank_raw_scores(&raw, lambda)
        .into_iter()
        .map(|(idx, s_calib, rank)| ScoredSummary {
            summary: candidates[idx].clone(),
            original_index: idx,
            s_info: raw[idx].0,
            s_abs: raw[idx].1,
            s_calib,
            rank,
            student_logprob: None,
        })
        .collect();
    Ok(RankedSummaryList { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    // the=1 cat=2 sat=3 ran=4
    const THE_CAT_SAT: [Token; 3] = [1, 2, 3];
    const THE_CAT_RAN: [Token; 3] = [1, 2, 4];

    #[test]
    fn rouge_n_examples() {
        assert_eq!(rouge_n_f1(&[1, 2, 3], &[1, 2, 3], 1), 1.0);
        assert_eq!(rouge_n_f1(&[1, 2], &[7, 8], 1), 0.0);
        assert!((rouge_n_f1(&THE_CAT_SAT, &THE_CAT_RAN, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((rouge_n_f1(&THE_CAT_SAT, &THE_CAT_RAN, 2) - 0.5).abs() < 1e-15);
        assert_eq!(rouge_n_f1(&[1], &[1], 2), 0.0);
    }

    #[test]
    fn rouge_n_clips_repeated_ngrams() {
        // candidate "a a a" vs reference "a": overlap clipped to 1
        let f = rouge_n_f1(&[5, 5, 5], &[5], 1);
        let (p, r) = (1.0 / 3.0, 1.0);
        assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_examples() {
        assert_eq!(rouge_l_f1(&[1, 2, 3], &[1, 2, 3]), 1.0);
        // "a b c d" vs "a c b d": LCS 3
        assert!((rouge_l_f1(&[1, 2, 3, 4], &[1, 3, 2, 4]) - 0.75).abs() < 1e-15);
        assert_eq!(rouge_l_f1(&[], &[1, 2]), 0.0);
        assert_eq!(lcs_len(&[1, 2, 3, 4], &[1, 3, 2, 4]), 3);
    }

    #[test]
    fn novel_ngram_examples() {
        let doc = [1, 2, 3, 4];
        for n in 1..=3 {
            assert_eq!(novel_ngram_ratio(&[2, 3, 4], &doc, n), 0.0);
        }
        for n in 1..=3 {
            assert_eq!(novel_ngram_ratio(&[7, 8, 9], &doc, n), 1.0);
        }
        // "a b x": bigrams (a b) seen, (b x) novel
        assert_eq!(novel_ngram_ratio(&[1, 2, 99], &doc, 2), 0.5);
        assert_eq!(novel_ngram_ratio(&[7, 8], &doc, 3), 0.0);
    }

    #[test]
    fn informativeness_and_abstractiveness() {
        assert_eq!(informativeness(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(informativeness(&[7, 8], &[1, 2, 3]).unwrap(), 0.0);
        let v = informativeness(&THE_CAT_SAT, &THE_CAT_RAN).unwrap();
        assert!((v - 11.0 / 18.0).abs() < 1e-15);
        assert!(matches!(informativeness(&[1], &[]), Err(Error::Empty(_))));

        let doc = [1, 2, 3, 4, 5, 6, 7];
        assert_eq!(abstractiveness(&[2, 3, 4, 5, 6], &doc).unwrap(), 0.0);
        assert_eq!(abstractiveness(&[10, 11, 12, 13, 14], &doc).unwrap(), 1.0);
        let short = abstractiveness(&[10, 11, 12, 13], &doc).unwrap();
        assert!((short - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(abstractiveness(&[1], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn identical_candidates_are_uniform() {
        let cands = vec![vec![1, 2, 3]; 4];
        let ranked = calibration_scores(&cands, &[1, 2], &[1, 2, 3, 4], 0.3).unwrap();
        for (pos, e) in ranked.entries.iter().enumerate() {
            assert!((e.s_calib - 0.25).abs() < 1e-12);
            assert_eq!(e.original_index, pos);
            assert_eq!(e.rank, pos + 1);
        }
    }

    #[test]
    fn lambda_zero_uses_information_only() {
        let ranked = rank_raw_scores(&[(0.6, 0.9), (0.2, 0.1)], 0.0);
        assert_eq!((ranked[0].0, ranked[0].2), (1, 1));
        assert_eq!((ranked[1].0, ranked[1].2), (0, 2));
        assert!((ranked[0].1 - 0.25).abs() < 1e-12);
        assert!((ranked[1].1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_sum_family_falls_back_to_uniform() {
        let ranked = rank_raw_scores(&[(0.0, 0.2), (0.0, 0.6)], 0.5);
        let total: f64 = ranked.iter().map(|r| r.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(ranked[1].0, 1);
    }

    #[test]
    fn rejects_empty_candidates() {
        assert!(calibration_scores(&[], &[1], &[1], 0.2).is_err());
    }
}
