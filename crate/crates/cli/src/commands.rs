use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use discal_core::corpus::{generate_synthetic_corpus, load_corpus, save_corpus, tokenize_all, CorpusExample, Vocabulary};
use discal_core::distill::{distill, evaluate, train_teacher, EvalReport, Metrics, MethodKind, ReportMeta, TrainLog};
use discal_core::seq2seq::{default_layer_indices, load_checkpoint, save_checkpoint, ModelConfig};
use serde_json::json;

use crate::config::RunConfig;
use crate::{Cli, Command, DistillArgs, EvaluateArgs, Invalid, MethodArg, TrainTeacherArgs};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn threads() -> Result<usize> {
    match std::env::var("DISCAL_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(invalid(format!("DISCAL_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(1),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref())?
        .with_seed(cli.seed)
        .with_threads(threads()?);
    config.validate()?;
    match cli.command {
        Command::GenData { out } => gen_data(&config, &out),
        Command::TrainTeacher(args) => cmd_train_teacher(config, args),
        Command::Distill(args) => cmd_distill(config, args),
        Command::Evaluate(args) => cmd_evaluate(config, args),
        Command::Compare { reports } => cmd_compare(&reports),
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(invalid(format!("{} already exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn log_path(out: &Path, log: Option<PathBuf>) -> PathBuf {
    log.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.json");
        PathBuf::from(p)
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_tokenized(path: &Path, vocab: &Vocabulary) -> Result<Vec<CorpusExample>> {
    let texts = load_corpus(path)?;
    Ok(tokenize_all(&texts, vocab))
}

fn gen_data(config: &RunConfig, out: &Path) -> Result<()> {
    let corpus = generate_synthetic_corpus(&config.synth)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for (name, split) in [("train", &corpus.train), ("val", &corpus.val), ("test", &corpus.test)] {
        let path = out.join(format!("{name}.jsonl"));
        save_corpus(split, &path)?;
        log::info!("wrote {} examples to {}", split.len(), path.display());
    }
    Ok(())
}

fn cmd_train_teacher(config: RunConfig, args: TrainTeacherArgs) -> Result<()> {
    refuse_overwrite(&args.out, args.force)?;
    let texts = load_corpus(&args.train)?;
    let vocab = Vocabulary::from_texts(texts.iter().flat_map(|e| [e.document.as_str(), e.summary.as_str()]));
    let train = tokenize_all(&texts, &vocab);
    let model_config = ModelConfig {
        vocab_size: vocab.len(),
        ..config.model.clone()
    };
    let mut train_config = config.teacher.clone();
    if let Some(steps) = args.steps {
        train_config.steps = steps;
    }
    train_config.validate()?;
    let (model, log) = train_teacher(&train, model_config, &train_config)?;
    save_checkpoint(&model, &vocab, &args.out)?;
    write_json(&log_path(&args.out, args.log), &log)?;
    report_loss_trend(&log);
    Ok(())
}

fn report_loss_trend(log: &TrainLog) {
    let losses = log.losses();
    let k = losses.len().min(10);
    if k > 0 {
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        log::info!(
            "loss: first {k} steps {:.4}, last {k} steps {:.4}",
            mean(&losses[..k]),
            mean(&losses[losses.len() - k..])
        );
    }
}

fn method_kind(args: &DistillArgs) -> Result<MethodKind> {
    if args.temperature.is_some() && args.method != MethodArg::Plate {
        return Err(invalid("--temperature only applies to --method plate"));
    }
    Ok(match args.method {
        MethodArg::Sft => MethodKind::Sft,
        MethodArg::Seq => MethodKind::SeqDistil,
        MethodArg::Plate => {
            let temperature = args.temperature.ok_or_else(|| invalid("--method plate requires --temperature"))?;
            if !(temperature >= 1.0 && temperature.is_finite()) {
                return Err(invalid("--temperature must be at least 1"));
            }
            MethodKind::Plate { temperature }
        }
        MethodArg::Discal => MethodKind::Discal,
        MethodArg::DiscalSelf => MethodKind::DiscalSelf,
    })
}

fn cmd_distill(config: RunConfig, args: DistillArgs) -> Result<()> {
    let method = method_kind(&args)?;
    refuse_overwrite(&args.out, args.force)?;
    let mut dc = config.distill.clone();
    if let Some(v) = args.lambda {
        dc.lambda = v;
    }
    if let Some(v) = args.gamma {
        dc.gamma = v;
    }
    if let Some(v) = args.eta {
        dc.eta = v;
    }
    if let Some(v) = args.n {
        dc.n = v;
    }
    if let Some(v) = args.margin {
        dc.margin_m = v;
    }
    if let Some(v) = args.alpha {
        dc.alpha = v;
    }
    if let Some(v) = args.steps {
        dc.train.steps = v;
    }
    dc.literal_calibration |= args.literal_calibration;
    if method == MethodKind::DiscalSelf {
        dc.lambda = 0.0;
    }
    dc.validate()?;

    let (teacher, vocab) = load_checkpoint(&args.teacher)?;
    let teacher_layers = teacher.config.decoder_layers;
    let indices = match (&args.indices, &config.student_layer_indices, method) {
        (Some(i), _, _) | (None, Some(i), _) => i.clone(),
        (None, None, MethodKind::DiscalSelf) => (0..teacher_layers).collect(),
        (None, None, _) => default_layer_indices(teacher_layers, config.student_decoder_layers)?,
    };
    let train = load_tokenized(&args.train, &vocab)?;
    log::info!("distilling with {method}, decoder layers {indices:?}");
    let (student, log) = distill(&teacher, &indices, &train, method, &dc)?;
    save_checkpoint(&student, &vocab, &args.out)?;
    write_json(&log_path(&args.out, args.log), &log)?;
    report_loss_trend(&log);
    Ok(())
}

fn cmd_evaluate(config: RunConfig, args: EvaluateArgs) -> Result<()> {
    let mut decode = config.decode.clone();
    if let Some(v) = args.beam_size {
        decode.beam_size = v;
    }
    if let Some(v) = args.length_penalty {
        decode.length_penalty = v;
    }
    if let Some(v) = args.min_length {
        decode.min_length = v;
    }
    if let Some(v) = args.max_length {
        decode.max_length = v;
    }
    decode.num_groups = 1;
    decode.validate()?;
    let (model, vocab) = load_checkpoint(&args.model)?;
    let test = load_tokenized(&args.test, &vocab)?;
    let label = args.label.unwrap_or_else(|| {
        args.model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let meta = ReportMeta {
        method: label,
        seed: config.seed(),
        config: json!({ "decode": decode, "model": model.config }),
    };
    let report = evaluate(&model, &vocab, &test, &decode, meta, threads()?)?;
    if report.failures() > 0 {
        log::warn!("{} examples failed to decode", report.failures());
    }
    fs::write(&args.report, report.to_json()?).with_context(|| format!("cannot write {}", args.report.display()))?;
    let a = &report.aggregates;
    log::info!(
        "R1 {:.2} R2 {:.2} RL {:.2} N1 {:.2} N3 {:.2} N5 {:.2}",
        a.rouge1,
        a.rouge2,
        a.rouge_l,
        a.novel1,
        a.novel3,
        a.novel5
    );
    Ok(())
}

/// Render reports as a table, starring the best value of each column
/// when there is more than one row.
pub fn compare_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let hashes: Vec<Option<&str>> = reports.iter().map(|r| r.config.get("test_corpus_hash").and_then(|h| h.as_str())).collect();
    if hashes.windows(2).any(|w| w[0] != w[1]) {
        out.push_str("warning: reports were computed on different test corpora\n");
    }
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    out.push_str(&format!("{:<width$}", "method"));
    for name in Metrics::NAMES {
        out.push_str(&format!(" {name:>9}"));
    }
    out.push('\n');
    let best: Vec<f64> = (0..6)
        .map(|c| {
            reports
                .iter()
                .map(|r| (r.aggregates.values()[c] * 100.0).round() / 100.0)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    for r in reports {
        out.push_str(&format!("{:<width$}", r.method));
        for (c, v) in r.aggregates.values().iter().enumerate() {
            let rounded = (v * 100.0).round() / 100.0;
            let mark = if reports.len() > 1 && rounded == best[c] { "*" } else { " " };
            out.push_str(&format!(" {rounded:>8.2}{mark}"));
        }
        out.push('\n');
    }
    out
}

fn cmd_compare(paths: &[PathBuf]) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str::<EvalReport>(&text).with_context(|| format!("{} is not a report", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    if reports.is_empty() {
        bail!("no reports given");
    }
    print!("{}", compare_table(&reports));
    Ok(())
}
