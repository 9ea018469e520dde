//! Per-instance algorithm selection with Siamese embeddings.
//!
//! Per-algorithm predictions become a performance space with one coordinate
//! per algorithm. Triplets of instances on which the algorithms perform alike
//! (or not) train a shared-weight MLP so that alike-performing instances embed
//! close together. An unseen instance then gets the algorithm that does best on
//! its nearest labelled neighbors in the embedding space.
//!
//! Modules map onto the stages:
//!
//! - [`dataset`]: CSV ingest and seeded splits, plus synthetic data with planted personas.
//! - [`baselearners`]: simple regressors that produce a prediction matrix from raw data.
//! - [`perfspace`]: per-instance performance metrics and the distances between them.
//! - [`personas`]: radius-based triplet mining and a k-means baseline.
//! - [`siamese`]: the embedding network and its training.
//! - [`selector`]: nearest-neighbor algorithm selection in the embedding space.
//! - [`eval`]: baselines and scoring, plus SVG scatter plots.
//! - [`cli`]: file-based subcommands and the end-to-end pipeline.

pub mod baselearners;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod perfspace;
pub mod personas;
mod seed;
pub mod selector;
pub mod siamese;

pub use dataset::{Dataset, Instance, PredictionMatrix, TargetBounds};
pub use perfspace::{DistanceKind, PerfMetric, PerformanceSpace};
pub use personas::{MiningConfig, Triplet};
pub use selector::{SelectionOutcome, SelectorModel};
pub use siamese::{EmbeddingModel, TrainConfig, TrainReport};

/// Crate-level error. Each variant carries the failing module's own error so
/// messages are prefixed with the stage that produced them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset: {0}")]
    Dataset(#[from] dataset::DatasetError),
    #[error("baselearners: {0}")]
    Learner(#[from] baselearners::LearnerError),
    #[error("perfspace: {0}")]
    PerfSpace(#[from] perfspace::PerfSpaceError),
    #[error("personas: {0}")]
    Mining(#[from] personas::MiningError),
    #[error("siamese: {0}")]
    Model(#[from] siamese::ModelError),
    #[error("selector: {0}")]
    Selector(#[from] selector::SelectorError),
    #[error("eval: {0}")]
    Eval(#[from] eval::EvalError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
