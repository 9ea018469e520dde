//! Performance metrics and the performance space: one coordinate per
//! algorithm, one point per instance.
//!
//! The composite RIIP×MPRE metric multiplies two normalizations of an
//! algorithm's absolute error `e_k` on an instance with target `y`:
//!
//! - relative error `ε_k = e_k / ε_M`, where `ε_M = max(y − B_L, B_U − y)` is
//!   the largest error any in-bounds prediction could make on that instance;
//! - relative intra-instance performance `I_k = e* / e_k`, where `e*` is the
//!   lowest error any algorithm achieved on the instance.
//!
//! `P_k = (1 − ε_k) · I_k` lies in `[0, 1]` for in-bounds predictions and the
//! per-instance winner always has `I = 1`.

use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PredictionMatrix, TargetBounds};

#[derive(Debug, thiserror::Error)]
pub enum PerfSpaceError {
    #[error("target {y} outside bounds [{lower}, {upper}]")]
    TargetOutOfBounds { y: f64, lower: f64, upper: f64 },
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cosine distance is undefined for an all-zero vector")]
    ZeroVector,
    #[error("dataset has {instances} instances but predictions have {rows} rows")]
    Misaligned { instances: usize, rows: usize },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerfMetric {
    #[serde(alias = "mae")]
    AbsoluteError,
    Rank,
    Riip,
    #[serde(alias = "riip-mpre")]
    RiipMpre,
}

impl PerfMetric {
    pub fn name(self) -> &'static str {
        match self {
            PerfMetric::AbsoluteError => "absolute_error",
            PerfMetric::Rank => "rank",
            PerfMetric::Riip => "riip",
            PerfMetric::RiipMpre => "riip_mpre",
        }
    }

    /// Whether larger values mean better performance.
    pub fn higher_is_better(self) -> bool {
        matches!(self, PerfMetric::Riip | PerfMetric::RiipMpre)
    }
}

impl std::fmt::Display for PerfMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerfMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mae" | "absolute_error" | "absolute-error" => Ok(PerfMetric::AbsoluteError),
            "rank" => Ok(PerfMetric::Rank),
            "riip" => Ok(PerfMetric::Riip),
            "riip-mpre" | "riip_mpre" => Ok(PerfMetric::RiipMpre),
            other => Err(format!(
                "unknown metric `{other}` (expected mae, rank, riip, riip-mpre)"
            )),
        }
    }
}

pub fn absolute_error(y: f64, yhat: f64) -> f64 {
    (y - yhat).abs()
}

/// Competition ranking: lowest error gets rank 1, exact ties share the
/// minimum rank (`(3, 3, 7)` ranks as `(1, 1, 3)`).
pub fn rank_row(errors: &[f64]) -> Vec<usize> {
    errors
        .iter()
        .map(|e| 1 + errors.iter().filter(|other| *other < e).count())
        .collect()
}

/// `max(y − B_L, B_U − y)`, the error of the worst in-bounds prediction.
pub fn max_possible_error(y: f64, bounds: TargetBounds) -> Result<f64, PerfSpaceError> {
    if !bounds.contains(y) {
        return Err(PerfSpaceError::TargetOutOfBounds {
            y,
            lower: bounds.lower(),
            upper: bounds.upper(),
        });
    }
    Ok((y - bounds.lower()).max(bounds.upper() - y))
}

pub fn relative_error(y: f64, yhat: f64, bounds: TargetBounds) -> Result<f64, PerfSpaceError> {
    Ok(absolute_error(y, yhat) / max_possible_error(y, bounds)?)
}

/// `e* / e_k` per algorithm. A zero-error algorithm scores 1 and, when the
/// best error is zero, every algorithm with positive error scores 0.
pub fn riip_row(errors: &[f64]) -> Vec<f64> {
    let best = errors.iter().copied().fold(f64::INFINITY, f64::min);
    errors
        .iter()
        .map(|&e| if e == 0.0 { 1.0 } else { best / e })
        .collect()
}

pub fn riip_mpre_row(y: f64, yhats: &[f64], bounds: TargetBounds) -> Result<Vec<f64>, PerfSpaceError> {
    let max_err = max_possible_error(y, bounds)?;
    let errors: Vec<f64> = yhats.iter().map(|&p| absolute_error(y, p)).collect();
    Ok(riip_row(&errors)
        .into_iter()
        .zip(&errors)
        .map(|(riip, e)| (1.0 - e / max_err) * riip)
        .collect())
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Instances plotted into a per-algorithm performance space.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceSpace {
    pub metric: PerfMetric,
    pub instance_ids: Vec<String>,
    pub algorithm_ids: Vec<String>,
    /// `values[[i, k]]`: performance of algorithm `k` on instance `i`.
    pub values: Array2<f64>,
    /// Per-instance argmin of absolute error, whatever the display metric.
    pub best: Vec<usize>,
}

/// Absolute errors `|y_i − ŷ_{k,i}|` as an `n × m` matrix.
pub fn absolute_errors(dataset: &Dataset, predictions: &PredictionMatrix) -> Result<Array2<f64>, PerfSpaceError> {
    check_aligned(dataset, predictions)?;
    Ok(Array2::from_shape_fn(
        (dataset.len(), predictions.algorithm_count()),
        |(i, k)| absolute_error(dataset.get(i).target, predictions.row(i)[k]),
    ))
}

fn check_aligned(dataset: &Dataset, predictions: &PredictionMatrix) -> Result<(), PerfSpaceError> {
    if dataset.len() != predictions.rows() {
        return Err(PerfSpaceError::Misaligned {
            instances: dataset.len(),
            rows: predictions.rows(),
        });
    }
    Ok(())
}

pub fn build_space(
    dataset: &Dataset,
    predictions: &PredictionMatrix,
    metric: PerfMetric,
) -> Result<PerformanceSpace, PerfSpaceError> {
    check_aligned(dataset, predictions)?;
    let bounds = dataset.bounds();
    let rows: Vec<(Vec<f64>, usize)> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let y = dataset.get(i).target;
            let yhats = predictions.row(i).to_vec();
            let errors: Vec<f64> = yhats.iter().map(|&p| absolute_error(y, p)).collect();
            let best = argmin(&errors);
            let values = match metric {
                PerfMetric::AbsoluteError => errors,
                PerfMetric::Rank => rank_row(&errors).into_iter().map(|r| r as f64).collect(),
                PerfMetric::Riip => riip_row(&errors),
                PerfMetric::RiipMpre => riip_mpre_row(y, &yhats, bounds)?,
            };
            Ok((values, best))
        })
        .collect::<Result<_, PerfSpaceError>>()?;

    let m = predictions.algorithm_count();
    let values = Array2::from_shape_fn((rows.len(), m), |(i, k)| rows[i].0[k]);
    Ok(PerformanceSpace {
        metric,
        instance_ids: dataset.ids().map(str::to_string).collect(),
        algorithm_ids: predictions.algorithm_ids().to_vec(),
        values,
        best: rows.into_iter().map(|(_, b)| b).collect(),
    })
}

impl PerformanceSpace {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn algorithm_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    /// Euclidean diagonal of the per-column min-max bounding box of `rows`.
    fn bbox_diameter_of(&self, rows: &[usize]) -> f64 {
        (0..self.algorithm_count())
            .map(|k| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.values[[i, k]];
                    (lo.min(v), hi.max(v))
                });
                if rows.is_empty() {
                    0.0
                } else {
                    (hi - lo) * (hi - lo)
                }
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean diagonal of the whole space's bounding box.
    pub fn diameter(&self) -> f64 {
        let all: Vec<usize> = (0..self.len()).collect();
        self.bbox_diameter_of(&all)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> PerformanceSpace {
        PerformanceSpace {
            metric: self.metric,
            instance_ids: indices.iter().map(|&i| self.instance_ids[i].clone()).collect(),
            algorithm_ids: self.algorithm_ids.clone(),
            values: self.values.select(ndarray::Axis(0), indices),
            best: indices.iter().map(|&i| self.best[i]).collect(),
        }
    }

    /// Seeded sample of up to `n` rows without replacement, kept in original order.
    pub fn sample(&self, n: usize, seed: u64) -> PerformanceSpace {
        self.subset(&sample_indices(self.len(), n, seed))
    }
}

fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut idx = index::sample(&mut crate::seed::rng(seed), len, n).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Cosine,
}

impl FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(DistanceKind::Euclidean),
            "cosine" => Ok(DistanceKind::Cosine),
            other => Err(format!("unknown distance `{other}` (expected euclidean, cosine)")),
        }
    }
}

pub fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Euclidean norm of the difference, or `1 − cos(u, v)`.
pub fn distance(u: &[f64], v: &[f64], kind: DistanceKind) -> Result<f64, PerfSpaceError> {
    if u.len() != v.len() {
        return Err(PerfSpaceError::LengthMismatch(u.len(), v.len()));
    }
    match kind {
        DistanceKind::Euclidean => Ok(euclidean(u, v)),
        DistanceKind::Cosine => {
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(PerfSpaceError::ZeroVector);
            }
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            Ok(1.0 - dot / (nu * nv))
        }
    }
}

/// Mean pairwise Euclidean distance within a seeded sample of up to
/// `sample_size` instances, divided by the diagonal of the sample's min-max
/// bounding box. Lies in `[0, 1]`; 0 when the sample has no spread.
pub fn dispersion(space: &PerformanceSpace, sample_size: usize, seed: u64) -> f64 {
    let rows = sample_indices(space.len(), sample_size, seed);
    if rows.len() < 2 {
        return 0.0;
    }
    let diameter = space.bbox_diameter_of(&rows);
    if diameter == 0.0 {
        return 0.0;
    }
    let points: Vec<Vec<f64>> = rows.iter().map(|&i| space.row(i).to_vec()).collect();
    let total: f64 = (0..points.len())
        .into_par_iter()
        .map(|a| {
            points[a + 1..]
                .iter()
                .map(|q| euclidean(&points[a], q))
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let pairs = (points.len() * (points.len() - 1) / 2) as f64;
    (total / pairs / diameter).min(1.0)
}

/// Writes `id,best,<algorithm...>`; `best` holds the winning algorithm id.
pub fn write_space_csv(space: &PerformanceSpace, path: &Path) -> Result<(), PerfSpaceError> {
    let file_err = |e: &dyn std::fmt::Display| PerfSpaceError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(&e))?;
    let mut header = vec!["id".to_string(), "best".to_string()];
    header.extend(space.algorithm_ids.iter().cloned());
    w.write_record(&header).map_err(|e| file_err(&e))?;
    for i in 0..space.len() {
        let mut record = vec![
            space.instance_ids[i].clone(),
            space.algorithm_ids[space.best[i]].clone(),
        ];
        record.extend(space.row(i).iter().map(f64::to_string));
        w.write_record(&record).map_err(|e| file_err(&e))?;
    }
    w.flush().map_err(|e| file_err(&e))
}

/// Reads a file written by [`write_space_csv`].
pub fn read_space_csv(path: &Path, metric: PerfMetric) -> Result<PerformanceSpace, PerfSpaceError> {
    let file_err = |message: String| PerfSpaceError::File {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| file_err(e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| file_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || header[0] != "id" || header[1] != "best" {
        return Err(file_err("expected header `id,best,<alg>,<alg>...`".into()));
    }
    let algorithm_ids = header[2..].to_vec();
    let m = algorithm_ids.len();
    let mut ids = Vec::new();
    let mut best = Vec::new();
    let mut flat = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| file_err(e.to_string()))?;
        if rec.len() != m + 2 {
            return Err(file_err(format!("row {}: expected {} fields", row + 1, m + 2)));
        }
        ids.push(rec[0].to_string());
        best.push(
            algorithm_ids
                .iter()
                .position(|a| a == &rec[1])
                .ok_or_else(|| file_err(format!("row {}: unknown best algorithm `{}`", row + 1, &rec[1])))?,
        );
        for (k, cell) in rec.iter().skip(2).enumerate() {
            flat.push(cell.parse::<f64>().map_err(|_| {
                file_err(format!("row {}, column `{}`: not a number", row + 1, algorithm_ids[k]))
            })?);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), m), flat).expect("row lengths checked");
    Ok(PerformanceSpace {
        metric,
        instance_ids: ids,
        algorithm_ids,
        values,
        best,
    })
}
