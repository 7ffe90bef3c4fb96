//! Temporal convolutional network that predicts a masked fourth measure from
//! three context measures and a QSC start token.
//!
//! Generic over `f32` (training and inference) and `f64` (gradient checks).

mod config;
mod io;
mod sample;
mod tcn;
mod train;

pub use config::{Calibration, ModelConfig, TrainConfig, FIRST_OUTPUT_POS, INPUT_LEN};
pub use io::{decode_model, encode_model, load_model, save_model, SavedModel, MODEL_MAGIC, MODEL_VERSION};
pub use sample::{log_geometric_mean, sample_measure, SampledMeasure, GREEDY_TEMPERATURE};
pub use tcn::{ConvLayer, Tcn, TcnParams};
pub use train::{
    build_input, calibrate, examples_from_windows, loss, loss_and_gradients, perplexity, train, EpochSummary, EvalReport, SequenceExample,
    TrainOutcome,
};

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating-point element type of the network.
pub trait Scalar:
    LinalgScalar
    + ScalarOperand
    + Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("expected {expected} tokens, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("model file version {found}, this build reads version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("model was trained on vocabulary {found}, expected {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
