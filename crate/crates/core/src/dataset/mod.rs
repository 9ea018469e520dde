//! Instances, target bounds, per-algorithm prediction matrices, and the
//! operations that produce them: CSV ingest, seeded splitting, and synthetic
//! generation with planted performance personas.

mod io;
mod synthetic;
pub mod toy;

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use io::{
    load_dataset, load_personas, load_predictions, load_queries, save_dataset, save_personas,
    save_predictions,
};
pub use synthetic::{generate_diagonal, generate_synthetic, SyntheticData, SyntheticSpec};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed csv: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: invalid header: {message}")]
    Header { path: PathBuf, message: String },
    #[error("{path}: row {row}, column `{column}`: cannot parse {value:?} as a number")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}: expected {expected} fields, found {found}")]
    RowLength {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: target {value} outside bounds [{lower}, {upper}]")]
    TargetOutOfBounds {
        row: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("instance `{id}` has {found} features, expected {expected}")]
    FeatureLength {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("predictions missing for instance `{0}`")]
    MissingInstance(String),
    #[error("predictions reference unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("at least 2 algorithms required, found {0}")]
    TooFewAlgorithms(usize),
    #[error("prediction matrix has {rows} rows but the dataset has {instances} instances")]
    Misaligned { rows: usize, instances: usize },
    #[error("invalid bounds: lower {lower} must be below upper {upper}")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("invalid split fractions ({train}, {test}): {reason}")]
    InvalidFractions { train: f64, test: f64, reason: String },
    #[error("split leaves an empty side ({train} train / {test} test)")]
    EmptySide { train: usize, test: usize },
    #[error("invalid synthetic spec: field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
}

/// Global bounds `[lower, upper]` of the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds")]
pub struct TargetBounds {
    lower: f64,
    upper: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    lower: f64,
    upper: f64,
}

impl TryFrom<RawBounds> for TargetBounds {
    type Error = DatasetError;

    fn try_from(raw: RawBounds) -> Result<Self, Self::Error> {
        TargetBounds::new(raw.lower, raw.upper)
    }
}

impl TargetBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, DatasetError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(DatasetError::InvalidBounds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn clamp(&self, y: f64) -> f64 {
        y.clamp(self.lower, self.upper)
    }
}

impl std::str::FromStr for TargetBounds {
    type Err = String;

    /// Parses `"lower,upper"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| format!("expected `lower,upper`, got {s:?}"))?;
        let lo: f64 = lo.trim().parse().map_err(|e| format!("lower bound: {e}"))?;
        let hi: f64 = hi.trim().parse().map_err(|e| format!("upper bound: {e}"))?;
        TargetBounds::new(lo, hi).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    pub target: f64,
}

/// An ordered collection of instances sharing a feature layout and target bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<Instance>,
    bounds: TargetBounds,
    feature_names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Dataset {
    /// Validates ids, feature lengths and target bounds.
    pub fn new(
        feature_names: Vec<String>,
        instances: Vec<Instance>,
        bounds: TargetBounds,
    ) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(instances.len());
        for (row, inst) in instances.iter().enumerate() {
            if inst.features.len() != feature_names.len() {
                return Err(DatasetError::FeatureLength {
                    id: inst.id.clone(),
                    expected: feature_names.len(),
                    found: inst.features.len(),
                });
            }
            if !bounds.contains(inst.target) {
                return Err(DatasetError::TargetOutOfBounds {
                    row: row + 1,
                    value: inst.target,
                    lower: bounds.lower,
                    upper: bounds.upper,
                });
            }
            if index.insert(inst.id.clone(), row).is_some() {
                return Err(DatasetError::DuplicateId(inst.id.clone()));
            }
        }
        Ok(Self {
            instances,
            bounds,
            feature_names,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn bounds(&self) -> TargetBounds {
        self.bounds
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn get(&self, i: usize) -> &Instance {
        &self.instances[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.instances.iter().map(|i| i.id.as_str())
    }

    pub fn targets(&self) -> Vec<f64> {
        self.instances.iter().map(|i| i.target).collect()
    }

    /// Instances at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let instances: Vec<Instance> = indices.iter().map(|&i| self.instances[i].clone()).collect();
        let index = instances
            .iter()
            .enumerate()
            .map(|(row, inst)| (inst.id.clone(), row))
            .collect();
        Dataset {
            instances,
            bounds: self.bounds,
            feature_names: self.feature_names.clone(),
            index,
        }
    }
}

/// Predicted targets, one row per instance and one column per algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    algorithm_ids: Vec<String>,
    values: Array2<f64>,
}

impl PredictionMatrix {
    pub fn new(algorithm_ids: Vec<String>, values: Array2<f64>) -> Result<Self, DatasetError> {
        if algorithm_ids.len() < 2 {
            return Err(DatasetError::TooFewAlgorithms(algorithm_ids.len()));
        }
        assert_eq!(
            values.ncols(),
            algorithm_ids.len(),
            "prediction columns must match algorithm ids"
        );
        Ok(Self {
            algorithm_ids,
            values,
        })
    }

    pub fn algorithm_ids(&self) -> &[String] {
        &self.algorithm_ids
    }

    pub fn algorithm_count(&self) -> usize {
        self.algorithm_ids.len()
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn subset(&self, indices: &[usize]) -> PredictionMatrix {
        PredictionMatrix {
            algorithm_ids: self.algorithm_ids.clone(),
            values: self.values.select(Axis(0), indices),
        }
    }

    /// Errors unless there is exactly one row per dataset instance.
    pub fn check_aligned(&self, dataset: &Dataset) -> Result<(), DatasetError> {
        if self.rows() != dataset.len() {
            return Err(DatasetError::Misaligned {
                rows: self.rows(),
                instances: dataset.len(),
            });
        }
        Ok(())
    }
}

/// One side of a split: instances plus their prediction rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Labelled {
    pub data: Dataset,
    pub predictions: PredictionMatrix,
}

/// Seeded train/test partition covering every instance exactly once. Each side keeps the
/// original instance order.
pub fn split(
    dataset: &Dataset,
    predictions: &PredictionMatrix,
    fractions: (f64, f64),
    seed: u64,
) -> Result<(Labelled, Labelled), DatasetError> {
    let (train, test) = fractions;
    let invalid = |reason: &str| DatasetError::InvalidFractions {
        train,
        test,
        reason: reason.to_string(),
    };
    if !(train > 0.0 && test > 0.0) {
        return Err(invalid("fractions must be positive"));
    }
    if ((train + test) - 1.0).abs() > 1e-9 {
        return Err(invalid("fractions must sum to 1"));
    }
    predictions.check_aligned(dataset)?;

    let n = dataset.len();
    let n_train = ((n as f64) * train).round() as usize;
    let n_train = n_train.min(n);
    if n_train == 0 || n_train == n {
        return Err(DatasetError::EmptySide {
            train: n_train,
            test: n - n_train,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::seed::rng(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let side = |idx: &[usize]| Labelled {
        data: dataset.subset(idx),
        predictions: predictions.subset(idx),
    };
    Ok((side(&train_idx), side(&test_idx)))
}

/// Per-feature z-score transform fitted on a reference set. Zero-variance
/// features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(dataset: &Dataset) -> Self {
        let d = dataset.feature_dim();
        let n = dataset.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for inst in dataset.instances() {
            for (m, x) in mean.iter_mut().zip(&inst.features) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for inst in dataset.instances() {
            for ((v, x), m) in var.iter_mut().zip(&inst.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}
