//! Deterministic regressors that stand in for a pool of candidate algorithms
//! when only raw labelled data is available.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError, PredictionMatrix};

const RIDGE: f64 = 1e-8;
const KNN_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error("cannot fit on an empty training set")]
    EmptyTrain,
    #[error("{kind} needs at least {needed} rows, got {found}")]
    TooFewRows {
        kind: LearnerKind,
        needed: usize,
        found: usize,
    },
    #[error("design matrix is singular even after ridge damping")]
    Singular,
    #[error("learner fitted on {expected} features, data has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Mean,
    Linear,
    #[serde(alias = "knn")]
    KnnRegressor,
    Stump,
}

impl LearnerKind {
    /// Short name used for prediction columns and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Mean => "mean",
            LearnerKind::Linear => "linear",
            LearnerKind::KnnRegressor => "knn",
            LearnerKind::Stump => "stump",
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mean" => Ok(LearnerKind::Mean),
            "linear" => Ok(LearnerKind::Linear),
            "knn" | "knn_regressor" => Ok(LearnerKind::KnnRegressor),
            "stump" => Ok(LearnerKind::Stump),
            other => Err(format!("unknown learner `{other}` (expected mean, linear, knn, stump)")),
        }
    }
}

/// A fitted regressor. Immutable after fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseLearner {
    Mean {
        value: f64,
        dim: usize,
    },
    Linear {
        weights: Vec<f64>,
        intercept: f64,
    },
    Knn {
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
        k: usize,
    },
    /// `x[feature] <= threshold` goes left. A stump with no usable split has
    /// an infinite threshold and equal leaves.
    Stump {
        feature: usize,
        threshold: f64,
        left: f64,
        right: f64,
        dim: usize,
    },
}

pub fn fit(kind: LearnerKind, train: &Dataset) -> Result<BaseLearner, LearnerError> {
    if train.is_empty() {
        return Err(LearnerError::EmptyTrain);
    }
    match kind {
        LearnerKind::Mean => Ok(fit_mean(train)),
        LearnerKind::Linear => fit_linear(train),
        LearnerKind::KnnRegressor => fit_knn(train, KNN_K),
        LearnerKind::Stump => Ok(fit_stump(train)),
    }
}

fn fit_mean(train: &Dataset) -> BaseLearner {
    let ys = train.targets();
    BaseLearner::Mean {
        value: ys.iter().sum::<f64>() / ys.len() as f64,
        dim: train.feature_dim(),
    }
}

/// Least squares through the ridge-damped normal equations `(XᵀX + λI) w = Xᵀy`,
/// with the intercept as the last column of `X`.
fn fit_linear(train: &Dataset) -> Result<BaseLearner, LearnerError> {
    let d = train.feature_dim();
    let n = train.len();
    if n < d + 1 {
        return Err(LearnerError::TooFewRows {
            kind: LearnerKind::Linear,
            needed: d + 1,
            found: n,
        });
    }
    let x = DMatrix::from_fn(n, d + 1, |i, j| {
        if j < d {
            train.get(i).features[j]
        } else {
            1.0
        }
    });
    let y = DVector::from_iterator(n, train.instances().iter().map(|inst| inst.target));
    let mut gram = x.transpose() * &x;
    for j in 0..=d {
        gram[(j, j)] += RIDGE;
    }
    let rhs = x.transpose() * y;
    let solution = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .ok_or(LearnerError::Singular)?;
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::Singular);
    }
    Ok(BaseLearner::Linear {
        weights: solution.rows(0, d).iter().copied().collect(),
        intercept: solution[d],
    })
}

/// Memorizes the training set; `k` is capped at its size.
pub fn fit_knn(train: &Dataset, k: usize) -> Result<BaseLearner, LearnerError> {
    if train.is_empty() {
        return Err(LearnerError::EmptyTrain);
    }
    Ok(BaseLearner::Knn {
        features: train.instances().iter().map(|i| i.features.clone()).collect(),
        targets: train.targets(),
        k: k.clamp(1, train.len()),
    })
}

/// Exhaustive search over single-feature thresholds (midpoints between
/// consecutive distinct values) for the lowest total squared error. Ties keep
/// the lowest feature index and threshold.
fn fit_stump(train: &Dataset) -> BaseLearner {
    let n = train.len();
    let d = train.feature_dim();
    let ys = train.targets();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let mut best = BaseLearner::Stump {
        feature: 0,
        threshold: f64::INFINITY,
        left: mean,
        right: mean,
        dim: d,
    };
    let mut best_sse = f64::INFINITY;

    let total: f64 = ys.iter().sum();
    let total_sq: f64 = ys.iter().map(|y| y * y).sum();
    for f in 0..d {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            train.get(a).features[f]
                .total_cmp(&train.get(b).features[f])
                .then(a.cmp(&b))
        });
        let (mut sum_l, mut sq_l) = (0.0, 0.0);
        for pos in 0..n - 1 {
            let y = ys[order[pos]];
            sum_l += y;
            sq_l += y * y;
            let here = train.get(order[pos]).features[f];
            let next = train.get(order[pos + 1]).features[f];
            if here == next {
                continue;
            }
            let n_l = (pos + 1) as f64;
            let n_r = (n - pos - 1) as f64;
            let sum_r = total - sum_l;
            let sq_r = total_sq - sq_l;
            let sse = (sq_l - sum_l * sum_l / n_l) + (sq_r - sum_r * sum_r / n_r);
            if sse < best_sse {
                best_sse = sse;
                best = BaseLearner::Stump {
                    feature: f,
                    threshold: here + (next - here) / 2.0,
                    left: sum_l / n_l,
                    right: sum_r / n_r,
                    dim: d,
                };
            }
        }
    }
    best
}

impl BaseLearner {
    pub fn kind(&self) -> LearnerKind {
        match self {
            BaseLearner::Mean { .. } => LearnerKind::Mean,
            BaseLearner::Linear { .. } => LearnerKind::Linear,
            BaseLearner::Knn { .. } => LearnerKind::KnnRegressor,
            BaseLearner::Stump { .. } => LearnerKind::Stump,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseLearner::Mean { dim, .. } | BaseLearner::Stump { dim, .. } => *dim,
            BaseLearner::Linear { weights, .. } => weights.len(),
            BaseLearner::Knn { features, .. } => features[0].len(),
        }
    }

    /// Unclamped prediction. Panics if `x` has the wrong length.
    pub fn predict(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "feature dimension mismatch");
        match self {
            BaseLearner::Mean { value, .. } => *value,
            BaseLearner::Linear { weights, intercept } => {
                intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            }
            BaseLearner::Knn {
                features,
                targets,
                k,
            } => {
                let mut dist: Vec<(f64, usize)> = features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let d2: f64 = f.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                        (d2, i)
                    })
                    .collect();
                dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                dist[..*k].iter().map(|&(_, i)| targets[i]).sum::<f64>() / *k as f64
            }
            BaseLearner::Stump {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if x[*feature] <= *threshold {
                    *left
                } else {
                    *right
                }
            }
        }
    }
}

/// Runs every learner on every instance, clamping into the dataset's bounds.
/// Column `k` is learner `k`, named by its kind (suffixed on repeats).
pub fn predict_all(learners: &[BaseLearner], data: &Dataset) -> Result<PredictionMatrix, LearnerError> {
    for l in learners {
        if l.dim() != data.feature_dim() {
            return Err(LearnerError::DimensionMismatch {
                expected: l.dim(),
                found: data.feature_dim(),
            });
        }
    }
    let bounds = data.bounds();
    let rows: Vec<Vec<f64>> = data
        .instances()
        .par_iter()
        .map(|inst| {
            learners
                .iter()
                .map(|l| bounds.clamp(l.predict(&inst.features)))
                .collect()
        })
        .collect();
    let m = learners.len();
    let values = Array2::from_shape_fn((data.len(), m), |(i, k)| rows[i][k]);

    let mut ids: Vec<String> = Vec::with_capacity(m);
    for l in learners {
        let base = l.kind().name();
        let repeats = ids.iter().filter(|id| id.split('_').next() == Some(base)).count();
        ids.push(if repeats == 0 {
            base.to_string()
        } else {
            format!("{base}_{}", repeats + 1)
        });
    }
    Ok(PredictionMatrix::new(ids, values)?)
}
