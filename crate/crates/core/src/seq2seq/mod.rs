//! Encoder-decoder transformer, its optimizer and checkpoint format.

mod adam;
mod attention;
mod checkpoint;
mod config;
mod incremental;
mod layers;
mod model;
mod student;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

pub use adam::{AdamConfig, AdamState};
pub use attention::{attention_weights, sample_attention_scale, scaled_attention, AttentionScale};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use incremental::IncrementalState;
pub use layers::{AttentionWeights, FeedForward, LayerNorm, Linear};
pub use model::{sum_memory_grads, DecoderLayer, DecoderPass, Dropout, EncoderLayer, EncoderPass, GradientSet, Params, Seq2SeqModel};
pub use student::{default_layer_indices, init_student_from_teacher};

/// Floating-point element type of model tensors.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[cfg(test)]
pub(crate) use model::gradcheck;
