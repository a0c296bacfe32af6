//! Graph neural network for skeletal-melody pitch prediction.
//!
//! Three GATv2 layers run over the heterogeneous graph. The chain-0 note
//! states then pass through a multi-scale temporal enhancer and a causal
//! self-attention predictor that scores the next note's pitch class.
//! Gradients come from a small reverse-mode tape over dense `f64` matrices.

mod features;
mod model;
mod params;
mod tape;
mod tensor;
mod train;

pub use features::{node_features, PreparedGraph, Topology, INPUT_DIM};
pub use model::{
    batch_loss, class_weights, feature_enhance, forward, gat_layer, gatv2_forward, loss_stage1, predict_probs,
    trailing_pool, BatchOut, ForwardOut, GatLayer, GatVars, LossTerms, ModelConfig, ModelParams,
};
pub use params::{BoundParams, ParamStore};
pub use tape::{log_sum_exp, sigmoid, softmax_in_place, Tape, Var};
pub use tensor::{Tensor2D, TensorError};
pub use train::{
    clip_global_norm, grad_check, load_checkpoint, save_checkpoint, split_dataset, train_stage1, Adam, EpochLog,
    GradCheckReport, TrainConfig, TrainReport, CHECKPOINT_VERSION,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset has no training targets")]
    EmptyDataset,
    #[error("graph has no next-note targets")]
    NoTargets,
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<TensorError> for GnnError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::DimensionMismatch(m) => GnnError::DimensionMismatch(m),
        }
    }
}
