//! Multi-head attention gate: a small transformer encoder that decides
//! whether a system turn should be knowledge-augmented.

mod checkpoint;
mod config;
mod data;
mod gradcheck;
mod model;
pub mod ops;
mod sweep;
mod train;
mod vocab;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{
    architecture_grid, ClassWeighting, FusionMode, MhaGateConfig, ThresholdPolicy, TrainingConfig,
};
pub use data::{build_vocabulary, encode_examples, raw_examples, RawExample};
pub use gradcheck::{
    gradient_check, gradient_check_linear, gradient_check_with_step, GradientCheck,
    GRADIENT_CHECK_STEP,
};
pub use model::{
    encoder_forward, GateOutput, LayerParams, MhaGateModel, Params, PreparedInput, TensorView,
};
pub use ops::{feed_forward, positional_encoding, scaled_attention};
pub use sweep::{sweep, SweepRow, SweepTable};
pub use train::{
    class_weights, evaluate, predict, score_examples, train, write_training_log, EpochLog,
    GateExample, TrainingOutcome,
};
pub use vocab::{Vocabulary, PAD, RESERVED, SEP, UNK};

#[derive(Debug, Error)]
pub enum MhaError {
    #[error("embedding dimension must be even and positive, got {0}")]
    OddEmbeddingDim(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every key is masked for query row {row}")]
    AllKeysMasked { row: usize },
    #[error("fusion mode {0:?} requires knowledge tokens")]
    MissingKnowledge(FusionMode),
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("no training examples")]
    EmptyData,
    #[error("class weighting needs both classes, but every label is {0}")]
    SingleClass(bool),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("no architecture configurations given")]
    EmptyGrid,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
