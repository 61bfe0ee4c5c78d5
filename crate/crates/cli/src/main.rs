//! `discal`: generate data, train a teacher, distill students, evaluate and
//! compare them.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// A user input was rejected before any work started.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(name = "discal", version, about = "Calibrated sequence-level distillation of summarizers")]
pub struct Cli {
    /// Seed for every random stream; overrides the seeds in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/val/test JSONL files of the synthetic corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a teacher on gold summaries.
    TrainTeacher(TrainTeacherArgs),
    /// Shrink the teacher and train a student.
    Distill(DistillArgs),
    /// Decode a test corpus and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Print a table comparing reports.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss log; defaults to `<out>.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overwrite an existing checkpoint.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Sft,
    Seq,
    Plate,
    Discal,
    DiscalSelf,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Unit margin of the ranking loss.
    #[arg(long = "margin")]
    pub margin: Option<f64>,
    /// Length-normalization exponent of the sequence log-probability.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fixed attention scale for `--method plate`.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Teacher decoder layers to keep, e.g. `0,3`.
    #[arg(long, value_delimiter = ',')]
    pub indices: Option<Vec<usize>>,
    /// Use the mirrored hinge of the ranking loss.
    #[arg(long)]
    pub literal_calibration: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Per-step diagnostics; defaults to `<out>.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Row label in reports; defaults to the checkpoint file stem.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    #[arg(long)]
    pub length_penalty: Option<f64>,
    #[arg(long)]
    pub min_length: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Invalid>() || matches!(c.downcast_ref::<discal_core::Error>(), Some(discal_core::Error::InvalidConfig { .. }))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
