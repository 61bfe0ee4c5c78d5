use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{DistillConfig, MethodKind, TrainConfig};
use super::losses::{discal_loss_train, nll_loss_train, CalibrationSettings, DiscalSettings};
use crate::corpus::CorpusExample;
use crate::decoding::{beam_search, generate_pseudo_summaries, DecodeConfig, ModelDecoder, PseudoSummarySet};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::seq2seq::{init_student_from_teacher, AdamState, AttentionScale, GradientSet, ModelConfig, Seq2SeqModel};
use crate::textmetrics::calibration_scores;
use crate::Token;

/// Summary of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub grad_norm: f64,
    /// Mean calibration score of the best-ranked pseudo summary per document.
    pub selected_s_calib: Option<f64>,
    pub selected_s_info: Option<f64>,
    pub selected_s_abs: Option<f64>,
    /// Documents whose pseudo-summary set had fewer than two entries.
    pub degenerate: usize,
}

/// Per-step training history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

#[derive(Debug, Clone, Default)]
struct ExampleStats {
    loss: f64,
    selected: Option<(f64, f64, f64)>,
    degenerate: bool,
}

/// Apply `f` to every item, fanning out over `threads` scoped workers.
/// Results keep the input order.
pub(crate) fn parallel_map<I: Sync, O: Send>(items: &[I], threads: usize, f: impl Fn(&I) -> Result<O> + Sync) -> Result<Vec<O>> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Result<Vec<O>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Epoch-wise shuffled batches over `len` examples.
struct BatchOrder {
    len: usize,
    seed: u64,
    epoch: usize,
    perm: Vec<usize>,
}

impl BatchOrder {
    fn new(len: usize, seed: u64) -> Self {
        let mut order = Self {
            len,
            seed,
            epoch: usize::MAX,
            perm: Vec::new(),
        };
        order.load(0);
        order
    }

    fn load(&mut self, epoch: usize) {
        if self.epoch != epoch {
            self.perm = (0..self.len).collect();
            self.perm.shuffle(&mut stream(self.seed, "batch-order", 0, epoch as u64));
            self.epoch = epoch;
        }
    }

    fn batch(&mut self, step: usize, size: usize) -> Vec<usize> {
        (step * size..(step + 1) * size)
            .map(|p| {
                self.load(p / self.len);
                self.perm[p % self.len]
            })
            .collect()
    }
}

fn check_lengths(examples: &[CorpusExample], config: &ModelConfig) -> Result<()> {
    for ex in examples {
        if ex.document.is_empty() || ex.gold.is_empty() {
            return Err(Error::Empty("document or gold summary"));
        }
        if ex.document.len() > config.max_positions {
            return Err(Error::TooLong {
                len: ex.document.len(),
                max: config.max_positions,
            });
        }
        if ex.gold.len() + 1 > config.max_positions {
            return Err(Error::TooLong {
                len: ex.gold.len() + 1,
                max: config.max_positions,
            });
        }
    }
    Ok(())
}

fn dropout_rng(model: &Seq2SeqModel<f32>, seed: u64, example: usize, step: usize) -> Option<(f64, rand_chacha::ChaCha8Rng)> {
    let rate = model.config.dropout_rate;
    (rate > 0.0).then(|| (rate, stream(seed, "dropout", example as u64, step as u64)))
}

/// Shared optimizer loop. `prepare` runs once per step before the
/// per-example gradient work and may cache targets.
fn optimize<S: Sync>(
    model: &mut Seq2SeqModel<f32>,
    num_examples: usize,
    cfg: &TrainConfig,
    mut prepare: impl FnMut(usize, &[usize]) -> Result<S>,
    example: impl Fn(&Seq2SeqModel<f32>, &S, usize, usize, &mut GradientSet<f32>) -> Result<ExampleStats> + Sync,
) -> Result<TrainLog> {
    if num_examples == 0 {
        return Err(Error::Empty("training split"));
    }
    cfg.validate()?;
    let mut adam = AdamState::new(&model.config);
    let mut order = BatchOrder::new(num_examples, cfg.seed);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch = order.batch(step, cfg.batch_size);
        let prepared = prepare(step, &batch)?;
        let snapshot = &*model;
        let results = parallel_map(&batch, cfg.threads, |&i| {
            let mut g = snapshot.zero_grads();
            let stats = example(snapshot, &prepared, i, step, &mut g)?;
            Ok((g, stats))
        })?;
        let mut grads = model.zero_grads();
        let mut loss = 0.0;
        let mut selected = Vec::new();
        let mut degenerate = 0;
        for (g, s) in &results {
            grads.accumulate(g);
            loss += s.loss;
            selected.extend(s.selected);
            degenerate += s.degenerate as usize;
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale as f32);
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        let lr = cfg.learning_rate(step);
        let grad_norm = adam.update(&cfg.optimizer, lr, &mut model.params, &grads)?;
        let mean = |k: fn(&(f64, f64, f64)) -> f64| {
            (!selected.is_empty()).then(|| selected.iter().map(k).sum::<f64>() / selected.len() as f64)
        };
        let record = StepRecord {
            step,
            learning_rate: lr,
            loss,
            grad_norm,
            selected_s_calib: mean(|s| s.0),
            selected_s_info: mean(|s| s.1),
            selected_s_abs: mean(|s| s.2),
            degenerate,
        };
        if step % 50 == 0 || step + 1 == cfg.steps {
            log::info!("step {step}: loss {loss:.4} lr {lr:.2e} grad norm {grad_norm:.3}");
        }
        log.steps.push(record);
    }
    Ok(log)
}

/// Train a model from scratch on gold summaries.
pub fn train_teacher(train: &[CorpusExample], model_config: ModelConfig, cfg: &TrainConfig) -> Result<(Seq2SeqModel<f32>, TrainLog)> {
    check_lengths(train, &model_config)?;
    let mut model = Seq2SeqModel::new(model_config, derive_seed(cfg.seed, "teacher-init", 0, 0))?;
    let smoothing = cfg.label_smoothing;
    let seed = cfg.seed;
    let log = optimize(
        &mut model,
        train.len(),
        cfg,
        |_, _| Ok(()),
        |m, _, i, step, g| {
            let ex = &train[i];
            let loss = nll_loss_train(m, &ex.document, &ex.gold, smoothing, g, dropout_rng(m, seed, i, step))?;
            Ok(ExampleStats {
                loss,
                ..ExampleStats::default()
            })
        },
    )?;
    Ok((model, log))
}

/// Best beam-search hypothesis of `model` for `document`, without the end token.
pub fn teacher_summary(model: &Seq2SeqModel<f32>, document: &[Token], decode: &DecodeConfig, scale: AttentionScale) -> Result<Vec<Token>> {
    let decoder = ModelDecoder::new(model, document, scale)?;
    let hyps = beam_search(&decoder, decode)?;
    let best = hyps.first().ok_or(Error::Empty("beam search output"))?;
    Ok(best.content().to_vec())
}

enum Payload {
    Target(Vec<Token>),
    Pseudo(PseudoSummarySet),
}

type Prepared = HashMap<usize, Payload>;

/// Build a student from `teacher` by keeping the decoder layers at
/// `indices`, then train it with `method`.
pub fn distill(
    teacher: &Seq2SeqModel<f32>,
    indices: &[usize],
    train: &[CorpusExample],
    method: MethodKind,
    cfg: &DistillConfig,
) -> Result<(Seq2SeqModel<f32>, TrainLog)> {
    cfg.validate()?;
    check_lengths(train, &teacher.config)?;
    let mut student = init_student_from_teacher(teacher, indices)?;
    let tc = &cfg.train;
    let seed = tc.seed;
    let smoothing = tc.label_smoothing;
    let lambda = match method {
        MethodKind::DiscalSelf => 0.0,
        _ => cfg.lambda,
    };
    let settings = DiscalSettings {
        eta: cfg.eta,
        smoothing,
        calibration: CalibrationSettings {
            margin: cfg.margin_m,
            alpha: cfg.alpha,
            literal: cfg.literal_calibration,
        },
    };
    let single_scale = match method {
        MethodKind::SeqDistil => Some(AttentionScale::UNIT),
        MethodKind::Plate { temperature } => Some(AttentionScale::new(temperature)?),
        _ => None,
    };
    let group = DecodeConfig {
        beam_size: cfg.beams_per_group,
        num_groups: 1,
        ..cfg.generation.clone()
    };

    let mut targets: Vec<Option<Vec<Token>>> = vec![None; train.len()];
    let mut pseudo_cache: Vec<Option<(usize, PseudoSummarySet)>> = vec![None; train.len()];

    let prepare = |step: usize, batch: &[usize]| -> Result<Prepared> {
        let mut out = Prepared::new();
        match method {
            MethodKind::Sft => {}
            MethodKind::SeqDistil | MethodKind::Plate { .. } => {
                let scale = single_scale.expect("single-target method");
                let mut missing: Vec<usize> = batch.iter().copied().filter(|&i| targets[i].is_none()).collect();
                missing.sort_unstable();
                missing.dedup();
                let made = parallel_map(&missing, tc.threads, |&i| {
                    teacher_summary(teacher, &train[i].document, &cfg.generation, scale)
                })?;
                for (i, t) in missing.into_iter().zip(made) {
                    targets[i] = Some(t);
                }
                for &i in batch {
                    out.insert(i, Payload::Target(targets[i].clone().expect("target generated")));
                }
            }
            MethodKind::Discal | MethodKind::DiscalSelf => {
                let mut stale: Vec<usize> = batch
                    .iter()
                    .copied()
                    .filter(|&i| match &pseudo_cache[i] {
                        Some((made, _)) => step - made >= cfg.regenerate_every,
                        None => true,
                    })
                    .collect();
                stale.sort_unstable();
                stale.dedup();
                let sets = parallel_map(&stale, tc.threads, |&i| {
                    let ex = &train[i];
                    let mut rng = stream(seed, "pseudo-scale", i as u64, step as u64);
                    generate_pseudo_summaries(teacher, &ex.id, &ex.document, cfg.n, cfg.gamma, &group, &mut rng)
                })?;
                for (i, set) in stale.into_iter().zip(sets) {
                    if set.degenerate {
                        log::debug!("document {} produced {} distinct pseudo summaries", set.document_id, set.summaries.len());
                    }
                    pseudo_cache[i] = Some((step, set));
                }
                for &i in batch {
                    let set = pseudo_cache[i].as_ref().expect("pseudo summaries generated").1.clone();
                    out.insert(i, Payload::Pseudo(set));
                }
            }
        }
        Ok(out)
    };
    let example = |m: &Seq2SeqModel<f32>, prepared: &Prepared, i: usize, step: usize, g: &mut GradientSet<f32>| -> Result<ExampleStats> {
        let ex = &train[i];
        let drop = dropout_rng(m, seed, i, step);
        match prepared.get(&i) {
            None => Ok(ExampleStats {
                loss: nll_loss_train(m, &ex.document, &ex.gold, smoothing, g, drop)?,
                ..ExampleStats::default()
            }),
            Some(Payload::Target(target)) => {
                if target.is_empty() {
                    return Ok(ExampleStats::default());
                }
                Ok(ExampleStats {
                    loss: nll_loss_train(m, &ex.document, target, smoothing, g, drop)?,
                    ..ExampleStats::default()
                })
            }
            Some(Payload::Pseudo(set)) => {
                let ranked = calibration_scores(&set.summaries, &ex.gold, &ex.document, lambda)?;
                let out = discal_loss_train(m, &ex.document, &ranked, settings, g, drop)?;
                let best = out.ranked.best().expect("non-empty set");
                Ok(ExampleStats {
                    loss: out.loss,
                    selected: Some((best.s_calib, best.s_info, best.s_abs)),
                    degenerate: set.degenerate,
                })
            }
        }
    };
    let log = optimize(&mut student, train.len(), tc, prepare, example)?;
    Ok((student, log))
}
