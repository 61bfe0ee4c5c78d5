//! Training objectives, teacher training, distillation methods and evaluation.

mod config;
mod eval;
mod losses;
mod train;

pub use config::{DistillConfig, MethodKind, TrainConfig};
pub use eval::{corpus_hash, evaluate, EvalReport, ExampleRecord, Metrics, ReportMeta};
pub use losses::{
    calibration_loss, calibration_loss_with_grad, discal_loss, discal_loss_with_grad, length_normalized_logprob,
    length_normalized_logprob_with_grad, lnorm_from_logprobs, nll_from_logprobs, nll_loss, nll_loss_with_grad, pairwise_hinge,
    CalibrationSettings, CalibrationValue, DiscalOutput, DiscalSettings,
};
pub use train::{distill, teacher_summary, train_teacher, StepRecord, TrainLog};
