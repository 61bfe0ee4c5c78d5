//! Sequence-level distillation of abstractive summarizers with calibration
//! over diverse teacher-generated pseudo summaries, at desk scale.
//!
//! The crate bundles every piece of the pipeline: exact text metrics and
//! candidate ranking ([`textmetrics`]), a small encoder-decoder transformer
//! with hand-written gradients ([`seq2seq`]), beam and diverse beam search
//! ([`decoding`]), the training objectives and distillation methods
//! ([`distill`]) and a synthetic corpus ([`corpus`]).

pub mod corpus;
pub mod decoding;
pub mod distill;
pub mod error;
pub mod rng;
pub mod seq2seq;
pub mod textmetrics;

pub use error::{CheckpointError, Error, Result};

/// Token identifier.
pub type Token = u32;
