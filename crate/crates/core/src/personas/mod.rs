//! Algorithm performance personas: groups of instances on which the candidate
//! algorithms behave alike. This module mines anchor/positive/negative
//! triplets from the performance space and keeps k-means as a baseline.

mod kmeans;
mod mining;

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::perfspace::{DistanceKind, PerfSpaceError, PerformanceSpace};

pub use kmeans::{kmeans, KMeansResult};
pub use mining::{mine_triplets_cluster, mine_triplets_radius, radius_assignment, resolved_radii};

#[derive(Debug, thiserror::Error)]
pub enum MiningError {
    #[error("need at least 3 instances to mine triplets, found {0}")]
    TooFewInstances(usize),
    #[error("invalid mining config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(
        "no valid triplet: {lacking_positive} of {anchors} anchors had no positive, \
         {lacking_negative} had no negative"
    )]
    NoValidTriplets {
        anchors: usize,
        lacking_positive: usize,
        lacking_negative: usize,
    },
    #[error("instance `{0}` of the performance space has no feature row")]
    MissingFeatures(String),
    #[error("no cluster has at least 2 members")]
    NoMultiMemberCluster,
    #[error("all instances share one cluster, so there are no negatives")]
    SingleCluster,
    #[error("k must satisfy 2 <= k <= {n}, got {k}")]
    InvalidK { k: usize, n: usize },
    #[error("assignment covers {labels} instances but the space has {instances}")]
    AssignmentSize { labels: usize, instances: usize },
    #[error(transparent)]
    Distance(#[from] PerfSpaceError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    SemiHard,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::SemiHard, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::SemiHard => "semi_hard",
            Difficulty::Hard => "hard",
        }
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Difficulty::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown difficulty `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub difficulty: Difficulty,
}

/// Positive/negative criteria for radius mining.
///
/// With `radii_relative` the radii are fractions of the performance space's
/// bounding-box diagonal (euclidean) or raw cosine distances (cosine).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningConfig {
    pub pos_radius: f64,
    pub neg_radius: f64,
    pub radii_relative: bool,
    pub distance: DistanceKind,
    pub require_same_best: bool,
    pub require_diff_best: bool,
    pub triplets_per_anchor: usize,
    /// Target shares of easy, semi-hard and hard negatives.
    pub difficulty_mix: [f64; 3],
    /// Unset means 0, or a value derived from the run seed in a pipeline.
    pub seed: Option<u64>,
    /// Stop adding anchors once this many triplets are collected.
    pub max_triplets: Option<usize>,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            pos_radius: 0.10,
            neg_radius: 0.25,
            radii_relative: true,
            distance: DistanceKind::Euclidean,
            require_same_best: true,
            require_diff_best: true,
            triplets_per_anchor: 2,
            difficulty_mix: [0.3, 0.4, 0.3],
            seed: None,
            max_triplets: None,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        let invalid = |field, reason: &str| MiningError::InvalidConfig {
            field,
            reason: reason.to_string(),
        };
        if !(self.pos_radius.is_finite() && self.pos_radius >= 0.0) {
            return Err(invalid("pos_radius", "must be a finite value >= 0"));
        }
        if !(self.neg_radius.is_finite() && self.neg_radius > self.pos_radius) {
            return Err(invalid("neg_radius", "must be finite and greater than pos_radius"));
        }
        if self.triplets_per_anchor == 0 {
            return Err(invalid("triplets_per_anchor", "must be positive"));
        }
        if self.difficulty_mix.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("difficulty_mix", "weights must be non-negative"));
        }
        if (self.difficulty_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("difficulty_mix", "weights must sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaMethod {
    Radius,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaAssignment {
    /// Persona id per instance, aligned with the space rows.
    pub labels: Vec<usize>,
    pub method: PersonaMethod,
}

impl PersonaAssignment {
    pub fn persona_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Share of instances whose best algorithm matches their persona's majority
/// best algorithm, i.e. the size-weighted mean of per-persona majority
/// fractions.
pub fn persona_purity(assignment: &PersonaAssignment, space: &PerformanceSpace) -> Result<f64, MiningError> {
    if assignment.labels.len() != space.len() {
        return Err(MiningError::AssignmentSize {
            labels: assignment.labels.len(),
            instances: space.len(),
        });
    }
    if space.is_empty() {
        return Ok(1.0);
    }
    let m = space.algorithm_count();
    let mut counts = vec![vec![0usize; m]; assignment.persona_count()];
    for (&label, &best) in assignment.labels.iter().zip(&space.best) {
        counts[label][best] += 1;
    }
    let majority: usize = counts.iter().map(|c| c.iter().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / space.len() as f64)
}

pub fn write_triplets(triplets: &[Triplet], path: &Path) -> Result<(), MiningError> {
    let file_err = |e: csv::Error| MiningError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(file_err)?;
    w.write_record(["anchor", "positive", "negative", "difficulty"])
        .map_err(file_err)?;
    for t in triplets {
        w.write_record([&t.anchor, &t.positive, &t.negative, t.difficulty.name()])
            .map_err(file_err)?;
    }
    w.flush().map_err(|e| MiningError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_triplets(path: &Path) -> Result<Vec<Triplet>, MiningError> {
    let file_err = |message: String| MiningError::File {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| file_err(e.to_string()))?;
    let header = r.headers().map_err(|e| file_err(e.to_string()))?;
    if header != vec!["anchor", "positive", "negative", "difficulty"] {
        return Err(file_err("expected header `anchor,positive,negative,difficulty`".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| file_err(e.to_string()))?;
        if rec.len() != 4 {
            return Err(file_err(format!("row {}: expected 4 fields", row + 1)));
        }
        out.push(Triplet {
            anchor: rec[0].to_string(),
            positive: rec[1].to_string(),
            negative: rec[2].to_string(),
            difficulty: rec[3]
                .parse()
                .map_err(|e: String| file_err(format!("row {}: {e}", row + 1)))?,
        });
    }
    Ok(out)
}
