//! Training objectives over a single document.
//!
//! Every loss has a value-only form and a `_with_grad` form that adds the
//! parameter gradient into a [`GradientSet`].

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};
use crate::seq2seq::{AttentionScale, Dropout, GradientSet, Real, Seq2SeqModel};
use crate::textmetrics::RankedSummaryList;
use crate::Token;

/// Token-level cross entropy of `target` followed by the end token, from the
/// log-probability rows of the decoder run on `[BOS] + target`. Returns the
/// mean loss and its gradient with respect to `logprobs`.
pub fn nll_from_logprobs<T: Real>(logprobs: &Array2<T>, target: &[Token], smoothing: f64) -> (f64, Array2<T>) {
    let steps = target.len() + 1;
    let vocab = logprobs.ncols();
    let mut grad = Array2::zeros((steps, vocab));
    let mut total = 0.0;
    let on = (1.0 - smoothing) / steps as f64;
    let off = smoothing / (vocab * steps) as f64;
    for (t, &y) in target.iter().chain(std::iter::once(&EOS)).enumerate() {
        let row = logprobs.row(t);
        total -= (1.0 - smoothing) * row[y as usize].as_f64();
        if smoothing > 0.0 {
            total -= smoothing / vocab as f64 * row.iter().map(|v| v.as_f64()).sum::<f64>();
            grad.row_mut(t).fill(T::lit(-off));
        }
        grad[[t, y as usize]] -= T::lit(on);
    }
    (total / steps as f64, grad)
}

/// `f = Σ_t log p(c_t) / |c|^alpha` over the candidate tokens (the end
/// token is not scored), and `df/dlogprobs`.
pub fn lnorm_from_logprobs<T: Real>(logprobs: &Array2<T>, candidate: &[Token], alpha: f64) -> (f64, Array2<T>) {
    let norm = (candidate.len() as f64).powf(alpha);
    let mut grad = Array2::zeros((candidate.len() + 1, logprobs.ncols()));
    let mut sum = 0.0;
    for (t, &c) in candidate.iter().enumerate() {
        sum += logprobs[[t, c as usize]].as_f64();
        grad[[t, c as usize]] = T::lit(1.0 / norm);
    }
    (sum / norm, grad)
}

/// Pairwise margin ranking over `f` listed best first:
/// `Σ_{i<j} max(0, f_j − f_i + (j−i)·margin)`. With `literal` the hinge is
/// mirrored to `max(0, f_i − f_j + (j−i)·margin)`. Returns the loss and
/// `dloss/df`.
pub fn pairwise_hinge(f: &[f64], margin: f64, literal: bool) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; f.len()];
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            let m = (j - i) as f64 * margin;
            let (hi, lo) = if literal { (i, j) } else { (j, i) };
            let v = f[hi] - f[lo] + m;
            if v > 0.0 {
                loss += v;
                grad[hi] += 1.0;
                grad[lo] -= 1.0;
            }
        }
    }
    (loss, grad)
}

/// Decoder runs over several targets that share one encoded document.
struct DocumentGraph<'m, T: Real> {
    model: &'m Seq2SeqModel<T>,
    enc: crate::seq2seq::EncoderPass<T>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'m, T: Real> DocumentGraph<'m, T> {
    fn new(model: &'m Seq2SeqModel<T>, document: &[Token], mut dropout: Option<(f64, ChaCha8Rng)>) -> Result<Self> {
        let enc = model.encode(
            document,
            AttentionScale::UNIT,
            dropout.as_mut().map(|(rate, rng)| Dropout { rate: *rate, rng }),
        )?;
        Ok(Self { model, enc, dropout })
    }

    fn decode(&mut self, target: &[Token]) -> Result<crate::seq2seq::DecoderPass<T>> {
        let inputs: Vec<Token> = std::iter::once(BOS).chain(target.iter().copied()).collect();
        let drop = self.dropout.as_mut().map(|(rate, rng)| Dropout { rate: *rate, rng });
        self.model.decode(&self.enc, &inputs, drop)
    }

    /// Decode every target, let `combine` turn the log-probabilities into a
    /// loss with per-target upstream gradients, and backpropagate when
    /// `grads` is present.
    fn run(
        mut self,
        targets: &[&[Token]],
        grads: Option<&mut GradientSet<T>>,
        combine: impl FnOnce(&[&Array2<T>]) -> (f64, Vec<Option<Array2<T>>>),
    ) -> Result<f64> {
        let passes = targets.iter().map(|t| self.decode(t)).collect::<Result<Vec<_>>>()?;
        let lps: Vec<&Array2<T>> = passes.iter().map(|p| &p.logprobs).collect();
        let (value, upstream) = combine(&lps);
        if !value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        if let Some(grads) = grads {
            let mut dmemory: Option<Array2<T>> = None;
            for (pass, up) in passes.iter().zip(upstream) {
                if let Some(up) = up {
                    let dm = self.model.decode_backward(&self.enc, pass, &up, grads);
                    match dmemory.as_mut() {
                        Some(acc) => *acc += &dm,
                        None => dmemory = Some(dm),
                    }
                }
            }
            if let Some(dm) = dmemory {
                self.model.encode_backward(&self.enc, &dm, grads);
            }
            grads.check_finite()?;
        }
        Ok(value)
    }
}

fn check_smoothing(s: f64) -> Result<()> {
    if (0.0..1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::config("label_smoothing", "must lie in [0, 1)"))
    }
}

fn nll_impl<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    target: &[Token],
    smoothing: f64,
    grads: Option<&mut GradientSet<T>>,
    dropout: Option<(f64, ChaCha8Rng)>,
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::Empty("target summary"));
    }
    check_smoothing(smoothing)?;
    DocumentGraph::new(model, document, dropout)?.run(&[target], grads, |lps| {
        let (v, g) = nll_from_logprobs(lps[0], target, smoothing);
        (v, vec![Some(g)])
    })
}

/// Mean (optionally label-smoothed) negative log-likelihood of `target`
/// and the end token given `document`.
pub fn nll_loss<T: Real>(model: &Seq2SeqModel<T>, document: &[Token], target: &[Token], smoothing: f64) -> Result<f64> {
    nll_impl(model, document, target, smoothing, None, None)
}

pub fn nll_loss_with_grad<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    target: &[Token],
    smoothing: f64,
    grads: &mut GradientSet<T>,
) -> Result<f64> {
    nll_impl(model, document, target, smoothing, Some(grads), None)
}

pub(crate) fn nll_loss_train<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    target: &[Token],
    smoothing: f64,
    grads: &mut GradientSet<T>,
    dropout: Option<(f64, ChaCha8Rng)>,
) -> Result<f64> {
    nll_impl(model, document, target, smoothing, Some(grads), dropout)
}

fn lnorm_impl<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    candidate: &[Token],
    alpha: f64,
    grads: Option<&mut GradientSet<T>>,
) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Empty("candidate summary"));
    }
    DocumentGraph::new(model, document, None)?.run(&[candidate], grads, |lps| {
        let (v, g) = lnorm_from_logprobs(lps[0], candidate, alpha);
        (v, vec![Some(g)])
    })
}

/// Length-normalized log-probability of `candidate` at attention scale 1.
pub fn length_normalized_logprob<T: Real>(model: &Seq2SeqModel<T>, document: &[Token], candidate: &[Token], alpha: f64) -> Result<f64> {
    lnorm_impl(model, document, candidate, alpha, None)
}

pub fn length_normalized_logprob_with_grad<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    candidate: &[Token],
    alpha: f64,
    grads: &mut GradientSet<T>,
) -> Result<f64> {
    lnorm_impl(model, document, candidate, alpha, Some(grads))
}

/// Settings of the ranking term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub margin: f64,
    pub alpha: f64,
    /// Use the mirrored hinge; see [`pairwise_hinge`].
    pub literal: bool,
}

/// Value of the calibration loss, or a marker that the set was too small.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CalibrationValue {
    Loss(f64),
    Skipped,
}

impl CalibrationValue {
    pub fn value(self) -> f64 {
        match self {
            CalibrationValue::Loss(v) => v,
            CalibrationValue::Skipped => 0.0,
        }
    }
}

fn ranked_targets(ranked: &RankedSummaryList) -> Result<Vec<&[Token]>> {
    let best_first: Vec<&[Token]> = ranked.entries.iter().rev().map(|e| e.summary.as_slice()).collect();
    if best_first.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("candidate summary"));
    }
    Ok(best_first)
}

fn calibration_impl<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    ranked: &RankedSummaryList,
    s: CalibrationSettings,
    grads: Option<&mut GradientSet<T>>,
) -> Result<CalibrationValue> {
    if ranked.len() < 2 {
        return Ok(CalibrationValue::Skipped);
    }
    let targets = ranked_targets(ranked)?;
    let v = DocumentGraph::new(model, document, None)?.run(&targets, grads, |lps| {
        let parts: Vec<_> = lps.iter().zip(&targets).map(|(lp, c)| lnorm_from_logprobs(*lp, c, s.alpha)).collect();
        let f: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let (loss, df) = pairwise_hinge(&f, s.margin, s.literal);
        let up = parts
            .into_iter()
            .zip(df)
            .map(|((_, g), d)| (d != 0.0).then(|| g * T::lit(d)))
            .collect();
        (loss, up)
    })?;
    Ok(CalibrationValue::Loss(v))
}

/// Margin ranking loss that pushes `f` to follow the order of `ranked`
/// (stored worst first, as produced by calibration scoring).
pub fn calibration_loss<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    ranked: &RankedSummaryList,
    settings: CalibrationSettings,
) -> Result<CalibrationValue> {
    calibration_impl(model, document, ranked, settings, None)
}

pub fn calibration_loss_with_grad<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    ranked: &RankedSummaryList,
    settings: CalibrationSettings,
    grads: &mut GradientSet<T>,
) -> Result<CalibrationValue> {
    calibration_impl(model, document, ranked, settings, Some(grads))
}

/// Settings of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscalSettings {
    pub eta: f64,
    pub smoothing: f64,
    pub calibration: CalibrationSettings,
}

/// Loss value of one document with its ranked candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscalOutput {
    pub loss: f64,
    pub nll: f64,
    pub calibration: CalibrationValue,
    /// Candidates worst first, with `student_logprob` filled.
    pub ranked: RankedSummaryList,
}

fn discal_impl<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    ranked: &RankedSummaryList,
    s: DiscalSettings,
    grads: Option<&mut GradientSet<T>>,
    dropout: Option<(f64, ChaCha8Rng)>,
) -> Result<DiscalOutput> {
    if ranked.is_empty() {
        return Err(Error::Empty("pseudo summary set"));
    }
    check_smoothing(s.smoothing)?;
    let targets = ranked_targets(ranked)?;
    let cal = s.calibration;
    let degenerate = targets.len() < 2;
    let mut f = Vec::new();
    let mut parts_out = (0.0, CalibrationValue::Skipped);
    let loss = DocumentGraph::new(model, document, dropout)?.run(&targets, grads, |lps| {
        let parts: Vec<_> = lps.iter().zip(&targets).map(|(lp, c)| lnorm_from_logprobs(*lp, c, cal.alpha)).collect();
        f = parts.iter().map(|p| p.0).collect();
        let (nll, dnll) = nll_from_logprobs(lps[0], targets[0], s.smoothing);
        let (calib, df) = if degenerate {
            (CalibrationValue::Skipped, vec![0.0; f.len()])
        } else {
            let (l, d) = pairwise_hinge(&f, cal.margin, cal.literal);
            (CalibrationValue::Loss(l), d)
        };
        parts_out = (nll, calib);
        let mut up: Vec<Option<Array2<T>>> = parts
            .into_iter()
            .zip(df)
            .map(|((_, g), d)| (d != 0.0).then(|| g * T::lit(d)))
            .collect();
        if s.eta != 0.0 {
            let scaled = dnll * T::lit(s.eta);
            up[0] = Some(match up[0].take() {
                Some(g) => g + scaled,
                None => scaled,
            });
        }
        (s.eta * nll + calib.value(), up)
    })?;
    let mut ranked = ranked.clone();
    let n = ranked.entries.len();
    for (k, e) in ranked.entries.iter_mut().enumerate() {
        e.student_logprob = Some(f[n - 1 - k]);
    }
    Ok(DiscalOutput {
        loss,
        nll: parts_out.0,
        calibration: parts_out.1,
        ranked,
    })
}

/// `eta · NLL(best candidate) + calibration loss` over `ranked`. A list
/// with one entry yields the NLL term alone.
pub fn discal_loss<T: Real>(model: &Seq2SeqModel<T>, document: &[Token], ranked: &RankedSummaryList, settings: DiscalSettings) -> Result<DiscalOutput> {
    discal_impl(model, document, ranked, settings, None, None)
}

pub fn discal_loss_with_grad<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    ranked: &RankedSummaryList,
    settings: DiscalSettings,
    grads: &mut GradientSet<T>,
) -> Result<DiscalOutput> {
    discal_impl(model, document, ranked, settings, Some(grads), None)
}

pub(crate) fn discal_loss_train<T: Real>(
    model: &Seq2SeqModel<T>,
    document: &[Token],
    ranked: &RankedSummaryList,
    settings: DiscalSettings,
    grads: &mut GradientSet<T>,
    dropout: Option<(f64, ChaCha8Rng)>,
) -> Result<DiscalOutput> {
    discal_impl(model, document, ranked, settings, Some(grads), dropout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::gradcheck::{check, tiny_config};
    use crate::textmetrics::calibration_scores;

    fn tiny(seed: u64) -> Seq2SeqModel<f64> {
        Seq2SeqModel::new(tiny_config(), seed).unwrap()
    }

    fn uniform() -> Seq2SeqModel<f64> {
        let mut m = tiny(0);
        m.params.lm_head.weight.fill(0.0);
        m.params.lm_head.bias.fill(0.0);
        m
    }

    const DOC: [Token; 6] = [4, 5, 6, 7, 8, 9];

    fn ranked() -> RankedSummaryList {
        let cands = vec![vec![4, 5, 10], vec![6, 10, 10, 9], vec![7, 8]];
        calibration_scores(&cands, &[4, 5, 6, 10], &DOC, 0.3).unwrap()
    }

    fn calib(margin: f64) -> CalibrationSettings {
        CalibrationSettings {
            margin,
            alpha: 1.0,
            literal: false,
        }
    }

    #[test]
    fn uniform_model_identities() {
        let m = uniform();
        let ln_v = (11f64).ln();
        assert!((nll_loss(&m, &DOC, &[4, 5, 6], 0.0).unwrap() - ln_v).abs() < 1e-12);
        assert!((length_normalized_logprob(&m, &DOC, &[4, 5, 6, 7], 1.0).unwrap() + ln_v).abs() < 1e-12);
        assert!((length_normalized_logprob(&m, &DOC, &[4, 5, 6, 7], 0.0).unwrap() + 4.0 * ln_v).abs() < 1e-12);
    }

    #[test]
    fn nll_matches_direct_summation() {
        let m = tiny(3);
        let target = [8, 9, 4, 10];
        let lp = m.forward_logprobs(&DOC, &target, AttentionScale::UNIT).unwrap();
        for eps in [0.0, 0.1] {
            let mut expect = 0.0;
            for (t, &y) in target.iter().chain([EOS].iter()).enumerate() {
                let mean_row: f64 = lp.row(t).iter().sum::<f64>() / 11.0;
                expect += -(1.0 - eps) * lp[[t, y as usize]] - eps * mean_row;
            }
            expect /= 5.0;
            assert!((nll_loss(&m, &DOC, &target, eps).unwrap() - expect).abs() < 1e-10);
        }
        assert!(matches!(nll_loss(&m, &DOC, &[], 0.0), Err(Error::Empty(_))));
    }

    #[test]
    fn lnorm_matches_direct_summation() {
        let m = tiny(4);
        let cand = [8, 9, 4];
        let lp = m.forward_logprobs(&DOC, &cand, AttentionScale::UNIT).unwrap();
        let sum: f64 = cand.iter().enumerate().map(|(t, &c)| lp[[t, c as usize]]).sum();
        let f = length_normalized_logprob(&m, &DOC, &cand, 2.0).unwrap();
        assert!((f - sum / 9.0).abs() < 1e-10);
        assert!((length_normalized_logprob(&m, &DOC, &cand, 0.0).unwrap() - sum).abs() < 1e-10);
        assert!(length_normalized_logprob(&m, &DOC, &[], 1.0).is_err());
    }

    #[test]
    fn hinge_examples() {
        let (l, _) = pairwise_hinge(&[-1.0, -1.0], 0.001, false);
        assert!((l - 0.001).abs() < 1e-15);
        let (l, g) = pairwise_hinge(&[-1.0, -2.0, -3.0], 0.1, false);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let f = [-0.3, -0.1, -0.9];
        let (l, _) = pairwise_hinge(&f, 0.05, false);
        let mut brute = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i < j {
                    brute += (f[j] - f[i] + (j - i) as f64 * 0.05).max(0.0);
                }
            }
        }
        assert!((l - brute).abs() < 1e-12);
        let (lit, _) = pairwise_hinge(&f, 0.05, true);
        let brute_lit: f64 = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| (f[i] - f[j] + (j - i) as f64 * 0.05).max(0.0))
            .sum();
        assert!((lit - brute_lit).abs() < 1e-12);
    }

    #[test]
    fn calibration_skips_small_sets() {
        let m = tiny(1);
        let one = calibration_scores(&[vec![4, 5]], &[4], &DOC, 0.5).unwrap();
        assert_eq!(calibration_loss(&m, &DOC, &one, calib(0.1)).unwrap(), CalibrationValue::Skipped);
    }

    #[test]
    fn discal_decomposes() {
        let m = tiny(5);
        let r = ranked();
        for eta in [0.0, 0.1, 1.0] {
            let s = DiscalSettings {
                eta,
                smoothing: 0.1,
                calibration: calib(0.01),
            };
            let out = discal_loss(&m, &DOC, &r, s).unwrap();
            let nll = nll_loss(&m, &DOC, &r.best().unwrap().summary, 0.1).unwrap();
            let cal = calibration_loss(&m, &DOC, &r, calib(0.01)).unwrap().value();
            assert!((out.loss - (eta * nll + cal)).abs() < 1e-12);
            for e in &out.ranked.entries {
                let f = length_normalized_logprob(&m, &DOC, &e.summary, 1.0).unwrap();
                assert!((e.student_logprob.unwrap() - f).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_checks() {
        let m = tiny(9);
        let target = [8, 9, 4, 10];
        for eps in [0.0, 0.1] {
            let mut g = m.zero_grads();
            nll_loss_with_grad(&m, &DOC, &target, eps, &mut g).unwrap();
            check(&m, &g, |p| nll_loss(p, &DOC, &target, eps).unwrap());
        }

        let mut g = m.zero_grads();
        length_normalized_logprob_with_grad(&m, &DOC, &target, 2.0, &mut g).unwrap();
        check(&m, &g, |p| length_normalized_logprob(p, &DOC, &target, 2.0).unwrap());

        let r = ranked();
        let settings = calib(0.5);
        let mut g = m.zero_grads();
        let v = calibration_loss_with_grad(&m, &DOC, &r, settings, &mut g).unwrap();
        assert!(v.value() > 0.0);
        check(&m, &g, |p| calibration_loss(p, &DOC, &r, settings).unwrap().value());

        let s = DiscalSettings {
            eta: 0.3,
            smoothing: 0.1,
            calibration: settings,
        };
        let mut g = m.zero_grads();
        discal_loss_with_grad(&m, &DOC, &r, s, &mut g).unwrap();
        check(&m, &g, |p| discal_loss(p, &DOC, &r, s).unwrap().loss);
    }

    #[test]
    fn satisfied_ranking_has_zero_gradient() {
        let m = tiny(2);
        let r = ranked();
        let mut g = m.zero_grads();
        let v = calibration_loss_with_grad(&m, &DOC, &r, calib(0.0), &mut g);
        let f: Vec<f64> = r
            .entries
            .iter()
            .rev()
            .map(|e| length_normalized_logprob(&m, &DOC, &e.summary, 1.0).unwrap())
            .collect();
        if pairwise_hinge(&f, 0.0, false).0 == 0.0 {
            assert_eq!(v.unwrap().value(), 0.0);
            assert_eq!(g.norm(), 0.0);
        }
        let mut g = m.zero_grads();
        let big = CalibrationSettings {
            margin: 0.0,
            alpha: 1.0,
            literal: false,
        };
        let two = calibration_scores(&[vec![4, 5], vec![4, 5, 6]], &[4, 5], &DOC, 0.0).unwrap();
        let fs: Vec<f64> = two
            .entries
            .iter()
            .rev()
            .map(|e| length_normalized_logprob(&m, &DOC, &e.summary, 1.0).unwrap())
            .collect();
        let val = calibration_loss_with_grad(&m, &DOC, &two, big, &mut g).unwrap().value();
        assert_eq!(val == 0.0, g.norm() == 0.0);
        assert!((val - (fs[1] - fs[0]).max(0.0)).abs() < 1e-12);
    }
}
