//! Algorithm selection for unseen instances: embed, gather labelled
//! neighbors within `alpha`, and pick the algorithm that served them best.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PredictionMatrix};
use crate::eval::single_best;
use crate::perfspace::{absolute_errors, argmax, build_space, DistanceKind, PerfMetric, PerfSpaceError};
use crate::siamese::{embedding_distance, model_from_value, model_to_value, EmbeddingModel, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum SelectorError {
    #[error("cannot fit a selector on an empty labelled set")]
    EmptyReference,
    #[error("k must be positive")]
    ZeroK,
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    PerfSpace(#[from] PerfSpaceError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Argmax of the neighbors' mean RIIP×MPRE per algorithm.
    #[default]
    MeanPerformance,
    /// Most frequent best algorithm among the neighbors.
    MajorityVote,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" | "mean_performance" => Ok(Aggregation::MeanPerformance),
            "vote" | "majority_vote" => Ok(Aggregation::MajorityVote),
            other => Err(format!("unknown aggregation `{other}` (expected mean, vote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    pub k: usize,
    /// Neighbor cutoff; when unset the training margin is used.
    pub alpha: Option<f64>,
    pub distance: DistanceKind,
    pub aggregation: Aggregation,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            k: 5,
            alpha: None,
            distance: DistanceKind::Euclidean,
            aggregation: Aggregation::MeanPerformance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorModel {
    pub embedding: EmbeddingModel,
    pub algorithm_ids: Vec<String>,
    pub reference_ids: Vec<String>,
    pub reference_embeddings: Vec<Vec<f64>>,
    pub reference_best: Vec<usize>,
    /// RIIP×MPRE row per reference instance.
    pub reference_perf: Vec<Vec<f64>>,
    pub k: usize,
    pub alpha: f64,
    pub distance: DistanceKind,
    pub aggregation: Aggregation,
    /// Single best algorithm of the labelled set, used when no neighbor qualifies.
    pub fallback: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub chosen: usize,
    pub neighbors_used: Vec<(String, f64)>,
    pub used_fallback: bool,
}

pub fn fit_selector(
    model: &EmbeddingModel,
    labelled: &Dataset,
    predictions: &PredictionMatrix,
    k: usize,
    alpha: f64,
    distance: DistanceKind,
    aggregation: Aggregation,
) -> Result<SelectorModel, SelectorError> {
    if labelled.is_empty() {
        return Err(SelectorError::EmptyReference);
    }
    if k == 0 {
        return Err(SelectorError::ZeroK);
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(SelectorError::InvalidAlpha(alpha));
    }
    let space = build_space(labelled, predictions, PerfMetric::RiipMpre)?;
    let errors = absolute_errors(labelled, predictions)?;
    let rows: Vec<Vec<f64>> = labelled.instances().iter().map(|i| i.features.clone()).collect();
    Ok(SelectorModel {
        embedding: model.clone(),
        algorithm_ids: predictions.algorithm_ids().to_vec(),
        reference_ids: space.instance_ids.clone(),
        reference_embeddings: model.embed_batch(&rows)?,
        reference_perf: (0..space.len()).map(|i| space.row(i).to_vec()).collect(),
        reference_best: space.best,
        k,
        alpha,
        distance,
        aggregation,
        fallback: single_best(&errors),
    })
}

impl SelectorModel {
    pub fn len(&self) -> usize {
        self.reference_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference_ids.is_empty()
    }

    /// Chooses from the `k` nearest references closer than `alpha`, ties in
    /// distance broken by reference id. Falls back to the single best
    /// algorithm when none qualifies.
    pub fn select(&self, features: &[f64]) -> Result<SelectionOutcome, SelectorError> {
        let u = self.embedding.embed(features)?;
        let mut candidates: Vec<(f64, usize)> = self
            .reference_embeddings
            .iter()
            .enumerate()
            .map(|(i, r)| (embedding_distance(&u, r, self.distance), i))
            .filter(|(d, _)| *d < self.alpha)
            .collect();
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.reference_ids[a.1].cmp(&self.reference_ids[b.1]))
        });
        candidates.truncate(self.k);
        if candidates.is_empty() {
            return Ok(SelectionOutcome {
                chosen: self.fallback,
                neighbors_used: Vec::new(),
                used_fallback: true,
            });
        }
        let m = self.algorithm_ids.len();
        let chosen = match self.aggregation {
            Aggregation::MeanPerformance => {
                let mut sums = vec![0.0; m];
                for &(_, i) in &candidates {
                    for (s, v) in sums.iter_mut().zip(&self.reference_perf[i]) {
                        *s += v;
                    }
                }
                argmax(&sums)
            }
            Aggregation::MajorityVote => {
                let mut votes = vec![0.0; m];
                for &(_, i) in &candidates {
                    votes[self.reference_best[i]] += 1.0;
                }
                argmax(&votes)
            }
        };
        Ok(SelectionOutcome {
            chosen,
            neighbors_used: candidates
                .into_iter()
                .map(|(d, i)| (self.reference_ids[i].clone(), d))
                .collect(),
            used_fallback: false,
        })
    }

    /// [`select`](Self::select) for every instance, in order.
    pub fn select_batch(&self, dataset: &Dataset) -> Result<Vec<SelectionOutcome>, SelectorError> {
        dataset
            .instances()
            .par_iter()
            .map(|inst| self.select(&inst.features))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectorFile {
    embedding: serde_json::Value,
    algorithm_ids: Vec<String>,
    reference_ids: Vec<String>,
    reference_embeddings: Vec<Vec<f64>>,
    reference_best: Vec<usize>,
    reference_perf: Vec<Vec<f64>>,
    k: usize,
    alpha: f64,
    distance: DistanceKind,
    aggregation: Aggregation,
    fallback: usize,
}

pub fn save_selector(selector: &SelectorModel, path: &Path) -> Result<(), SelectorError> {
    let io = |e: &dyn std::fmt::Display| SelectorError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = SelectorFile {
        embedding: model_to_value(&selector.embedding),
        algorithm_ids: selector.algorithm_ids.clone(),
        reference_ids: selector.reference_ids.clone(),
        reference_embeddings: selector.reference_embeddings.clone(),
        reference_best: selector.reference_best.clone(),
        reference_perf: selector.reference_perf.clone(),
        k: selector.k,
        alpha: selector.alpha,
        distance: selector.distance,
        aggregation: selector.aggregation,
        fallback: selector.fallback,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| io(&e))?;
    std::fs::write(path, text + "\n").map_err(|e| io(&e))
}

pub fn load_selector(path: &Path) -> Result<SelectorModel, SelectorError> {
    let io = |e: &dyn std::fmt::Display| SelectorError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let text = std::fs::read_to_string(path).map_err(|e| io(&e))?;
    let f: SelectorFile = serde_json::from_str(&text).map_err(|e| io(&e))?;
    let n = f.reference_ids.len();
    let m = f.algorithm_ids.len();
    let aligned = n > 0
        && f.reference_embeddings.len() == n
        && f.reference_best.len() == n
        && f.reference_perf.len() == n
        && f.reference_perf.iter().all(|r| r.len() == m)
        && f.reference_best.iter().all(|&b| b < m)
        && f.fallback < m;
    if !aligned {
        return Err(io(&"reference arrays are empty or misaligned"));
    }
    Ok(SelectorModel {
        embedding: model_from_value(f.embedding)?,
        algorithm_ids: f.algorithm_ids,
        reference_ids: f.reference_ids,
        reference_embeddings: f.reference_embeddings,
        reference_best: f.reference_best,
        reference_perf: f.reference_perf,
        k: f.k,
        alpha: f.alpha,
        distance: f.distance,
        aggregation: f.aggregation,
        fallback: f.fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{toy, Instance, TargetBounds};
    use crate::siamese::{init_model, Activation};
    use ndarray::Array2;

    /// Identity embedding on raw features, so distances are hand-computable.
    fn identity(d: usize) -> EmbeddingModel {
        let mut m = init_model(&[d, d], Activation::Relu, false, 0).unwrap();
        m.weights[0] = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        m
    }

    fn line(n: usize, preds: impl Fn(usize) -> [f64; 2]) -> (Dataset, PredictionMatrix) {
        let instances = (0..n)
            .map(|i| Instance {
                id: format!("r{i:03}"),
                features: vec![i as f64],
                target: 5.0,
            })
            .collect();
        let ds = Dataset::new(vec!["x".into()], instances, TargetBounds::new(0.0, 10.0).unwrap()).unwrap();
        let pm = PredictionMatrix::new(
            vec!["a1".into(), "a2".into()],
            Array2::from_shape_fn((n, 2), |(i, k)| preds(i)[k]),
        )
        .unwrap();
        (ds, pm)
    }

    #[test]
    fn reference_matrix_has_one_row_per_instance() {
        let (ds, pm) = line(100, |_| [4.0, 6.5]);
        let mut model = init_model(&[1, 8, 16], Activation::Relu, true, 3).unwrap();
        model.biases[0] = vec![0.1; 8];
        let s = fit_selector(&model, &ds, &pm, 5, 0.2, DistanceKind::Euclidean, Aggregation::MeanPerformance).unwrap();
        assert_eq!(s.reference_embeddings.len(), 100);
        assert!(s.reference_embeddings.iter().all(|e| e.len() == 16));
        assert_eq!(s, fit_selector(&model, &ds, &pm, 5, 0.2, DistanceKind::Euclidean, Aggregation::MeanPerformance).unwrap());
    }

    #[test]
    fn fallback_is_lowest_mean_error() {
        let (ds, pm) = toy::labelled();
        let s = fit_selector(&identity(3), &ds, &pm, 5, 0.5, DistanceKind::Euclidean, Aggregation::MeanPerformance).unwrap();
        assert_eq!(s.fallback, 1);
        let far = s.select(&[100.0, 1e4, -1e4]).unwrap();
        assert!(far.used_fallback && far.neighbors_used.is_empty());
        assert_eq!(far.chosen, 1);
    }

    #[test]
    fn mean_performance_aggregation() {
        // a1 wins narrowly on r000 and r001, a2 wins outright on r002.
        let (ds, pm) = line(3, |i| if i < 2 { [4.9, 4.89] } else { [0.0, 5.0] });
        let s = fit_selector(&identity(1), &ds, &pm, 3, 10.0, DistanceKind::Euclidean, Aggregation::MeanPerformance).unwrap();
        assert_eq!(s.reference_best, vec![0, 0, 1]);
        let out = s.select(&[1.0]).unwrap();
        assert_eq!(out.neighbors_used.len(), 3);
        // Mean RIIP×MPRE: a1 (0.98 + 0.98 + 0) / 3 ≈ 0.653, a2 (0.889 + 0.889 + 1) / 3 ≈ 0.926.
        assert_eq!(out.chosen, 1);
        let vote = SelectorModel {
            aggregation: Aggregation::MajorityVote,
            ..s
        };
        assert_eq!(vote.select(&[1.0]).unwrap().chosen, 0);
    }

    #[test]
    fn neighbors_respect_alpha_and_k() {
        let (ds, pm) = line(50, |i| if i % 2 == 0 { [5.0, 6.0] } else { [7.0, 5.0] });
        let s = fit_selector(&identity(1), &ds, &pm, 4, 3.5, DistanceKind::Euclidean, Aggregation::MeanPerformance).unwrap();
        for q in [0.0, 10.2, 25.5, 49.0, 60.0] {
            let out = s.select(&[q]).unwrap();
            assert!(out.neighbors_used.len() <= 4);
            assert!(out.neighbors_used.iter().all(|(_, d)| *d < 3.5));
            assert_eq!(out.used_fallback, out.neighbors_used.is_empty());
        }
        // Equidistant neighbors at 9 and 11 are ordered by id.
        let out = s.select(&[10.0]).unwrap();
        let ids: Vec<&str> = out.neighbors_used.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["r010", "r009", "r011", "r008"]);
    }

    #[test]
    fn batch_matches_single_and_preserves_order() {
        let (ds, pm) = line(30, |i| [5.0 + (i % 3) as f64, 5.5]);
        let s = fit_selector(&identity(1), &ds, &pm, 3, 2.0, DistanceKind::Euclidean, Aggregation::MeanPerformance).unwrap();
        let batch = s.select_batch(&ds).unwrap();
        assert_eq!(batch.len(), 30);
        for (i, out) in batch.iter().enumerate() {
            assert_eq!(*out, s.select(&ds.get(i).features).unwrap());
        }
        assert!(s.select_batch(&ds.subset(&[])).unwrap().is_empty());
    }

    #[test]
    fn permuting_references_keeps_choices() {
        let (ds, pm) = line(40, |i| [5.0 + ((i * 7) % 5) as f64 * 0.5, 5.0 + ((i * 3) % 4) as f64 * 0.5]);
        let s = fit_selector(&identity(1), &ds, &pm, 5, 4.0, DistanceKind::Euclidean, Aggregation::MeanPerformance).unwrap();
        let order: Vec<usize> = (0..40).rev().collect();
        let r = fit_selector(
            &identity(1),
            &ds.subset(&order),
            &pm.subset(&order),
            5,
            4.0,
            DistanceKind::Euclidean,
            Aggregation::MeanPerformance,
        )
        .unwrap();
        for q in 0..80 {
            let x = [q as f64 * 0.5];
            assert_eq!(s.select(&x).unwrap().chosen, r.select(&x).unwrap().chosen);
        }
    }

    #[test]
    fn uniform_references_always_pick_their_algorithm() {
        let (ds, pm) = line(20, |_| [9.0, 5.2]);
        let s = fit_selector(&identity(1), &ds, &pm, 5, 1.5, DistanceKind::Euclidean, Aggregation::MeanPerformance).unwrap();
        assert_eq!(s.fallback, 1);
        for q in -10..40 {
            assert_eq!(s.select(&[q as f64]).unwrap().chosen, 1);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let (ds, pm) = toy::labelled();
        let model = init_model(&[3, 4, 2], Activation::Tanh, true, 8).unwrap();
        let s = fit_selector(&model, &ds, &pm, 2, 0.3, DistanceKind::Cosine, Aggregation::MajorityVote).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("selector.json");
        save_selector(&s, &path).unwrap();
        assert_eq!(load_selector(&path).unwrap(), s);
    }

    #[test]
    fn empty_reference_is_an_error() {
        let (ds, pm) = toy::labelled();
        let r = fit_selector(&identity(3), &ds.subset(&[]), &pm.subset(&[]), 5, 0.2, DistanceKind::Euclidean, Aggregation::MeanPerformance);
        assert!(matches!(r, Err(SelectorError::EmptyReference)));
    }
}
