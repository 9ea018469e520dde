//! Shared-weight embedding network trained on performance triplets.
//!
//! The three branches of a triplet run through one [`EmbeddingModel`]; the
//! loss pulls anchor and positive together and pushes the negative at least
//! a margin further away.

mod loss;
mod model;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use loss::{contrastive_loss, embedding_distance, triplet_loss, LossKind};
pub use model::{init_model, load_model, save_model, Activation, EmbeddingModel};
pub use train::{grad_check, train, train_with_progress, triplet_satisfaction, Optimizer, TrainConfig, TrainReport};

pub(crate) use model::{model_from_value, model_to_value};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("need at least 2 layer sizes, got {0}")]
    TooFewLayers(usize),
    #[error("layer sizes must be positive")]
    ZeroLayerSize,
    #[error("weights or biases do not match layer_sizes")]
    ShapeMismatch,
    #[error("expected {expected} input features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid training config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("no triplets to train on")]
    EmptyTriplets,
    #[error("triplet references unknown instance `{0}`")]
    UnknownId(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("hinge is inactive (zero loss), resample the triplet")]
    InactiveHinge,
    #[error("point lies within {0} of a loss or relu kink, resample the triplet")]
    KinkAdjacent(f64),
    #[error("model checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ModelError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Architecture of a fresh embedding network; the input size comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub normalize_output: bool,
    pub seed: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            embedding_dim: 16,
            activation: Activation::Relu,
            normalize_output: true,
            seed: None,
        }
    }
}

impl ModelConfig {
    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.embedding_dim);
        sizes
    }
}
