use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselearners::LearnerKind;
use crate::dataset::{SyntheticSpec, TargetBounds};
use crate::perfspace::PerfMetric;
use crate::personas::MiningConfig;
use crate::selector::SelectorConfig;
use crate::siamese::{ModelConfig, TrainConfig};
use crate::{seed, Error};

/// Where the labelled instances and their per-algorithm predictions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    /// The six-row worked example with bounds `[0, 10]`.
    Toy,
    Synthetic {
        spec: SyntheticSpec,
    },
    /// Two algorithms with errors uniform on `[0, 10]²`; features are the
    /// scaled errors plus noise.
    Diagonal {
        n: usize,
        feature_noise: f64,
        seed: u64,
    },
    /// CSV files. Without `predictions`, the listed base learners are fitted
    /// on all rows and their in-sample predictions are used.
    Files {
        dataset: PathBuf,
        #[serde(default)]
        predictions: Option<PathBuf>,
        bounds: TargetBounds,
        #[serde(default)]
        learners: Option<Vec<LearnerKind>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Siamese,
    FeatureKnn,
    Cluster,
    Sbs,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Siamese => "siamese",
            Method::FeatureKnn => "feature-knn",
            Method::Cluster => "cluster",
            Method::Sbs => "sbs",
            Method::Random => "random",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Method::Siamese, Method::FeatureKnn, Method::Cluster, Method::Sbs, Method::Random]
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| format!("unknown method `{s}` (expected siamese, feature-knn, cluster, sbs, random)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.7, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub feature_knn_k: usize,
    /// Clusters for the k-means baseline, capped at the training size.
    pub cluster_k: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_seed: Option<u64>,
    pub random_seed: Option<u64>,
    /// Instances drawn for scatter plots and the dispersion statistic.
    pub plot_sample: usize,
    pub plot_seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Siamese, Method::FeatureKnn, Method::Cluster, Method::Sbs, Method::Random],
            feature_knn_k: 5,
            cluster_k: 5,
            kmeans_max_iters: 100,
            kmeans_seed: None,
            random_seed: None,
            plot_sample: 1000,
            plot_seed: None,
        }
    }
}

/// Every setting of a pipeline run. Stage seeds left unset are derived from
/// `seed`, so one number reproduces the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub input: InputConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_metric")]
    pub metric: PerfMetric,
    #[serde(default)]
    pub mining: MiningConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub selector: SelectorConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_metric() -> PerfMetric {
    PerfMetric::RiipMpre
}

impl RunConfig {
    pub fn new(input: InputConfig) -> Self {
        Self {
            seed: 0,
            out_dir: default_out_dir(),
            input,
            split: SplitConfig::default(),
            metric: default_metric(),
            mining: MiningConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            selector: SelectorConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.out_dir);
        if let InputConfig::Files {
            dataset, predictions, ..
        } = &mut config.input
        {
            rebase(dataset);
            if let Some(p) = predictions {
                rebase(p);
            }
        }
        Ok(config)
    }

    /// Fills unset stage seeds from the run seed and unset `alpha` from the
    /// training margin. Idempotent.
    pub fn resolve(&mut self) {
        let global = self.seed;
        let stage = |slot: &mut Option<u64>, name: &str| {
            slot.get_or_insert(seed::mix(global, seed::stage_tag(name)));
        };
        stage(&mut self.split.seed, "split");
        stage(&mut self.mining.seed, "mining");
        stage(&mut self.model.seed, "model");
        stage(&mut self.training.seed, "training");
        stage(&mut self.eval.kmeans_seed, "kmeans");
        stage(&mut self.eval.random_seed, "random");
        stage(&mut self.eval.plot_seed, "plot");
        self.selector.alpha.get_or_insert(self.training.margin);
    }

    pub fn validate(&self) -> Result<(), Error> {
        let invalid = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.split.train > 0.0 && self.split.train < 1.0) {
            return invalid("split.train must lie strictly between 0 and 1");
        }
        self.mining.validate()?;
        self.training.validate()?;
        if self.model.embedding_dim == 0 || self.model.hidden.contains(&0) {
            return invalid("model layer sizes must be positive");
        }
        if self.selector.k == 0 {
            return invalid("selector.k must be positive");
        }
        if let Some(a) = self.selector.alpha {
            if !(a.is_finite() && a > 0.0) {
                return invalid("selector.alpha must be positive");
            }
        }
        if self.eval.methods.is_empty() {
            return invalid("eval.methods must not be empty");
        }
        if self.eval.feature_knn_k == 0 {
            return invalid("eval.feature_knn_k must be positive");
        }
        if self.eval.cluster_k < 2 {
            return invalid("eval.cluster_k must be at least 2");
        }
        match &self.input {
            InputConfig::Synthetic { spec } => spec.validate()?,
            InputConfig::Diagonal { n, feature_noise, .. } => {
                if *n < 3 || !(feature_noise.is_finite() && *feature_noise >= 0.0) {
                    return invalid("input.n must be at least 3 and feature_noise non-negative");
                }
            }
            InputConfig::Files {
                predictions: None,
                learners,
                ..
            }
                if learners.as_ref().is_none_or(|l| l.len() < 2) => {
                    return invalid("input.learners needs at least 2 entries when predictions are absent");
                }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"input": {"kind": "toy"}}"#).unwrap();
        assert_eq!(c, RunConfig::new(InputConfig::Toy));
        assert_eq!(c.eval.methods.len(), 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"input": {"kind": "toy"}, "sed": 1}"#,
            r#"{"input": {"kind": "toy"}, "mining": {"radius": 1}}"#,
            r#"{"input": {"kind": "toy"}, "training": {"lr": 1}}"#,
        ] {
            assert!(serde_json::from_str::<RunConfig>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn explicit_stage_seeds_survive_resolution() {
        let mut c = RunConfig::new(InputConfig::Toy);
        c.seed = 3;
        c.training.seed = Some(99);
        c.resolve();
        assert_eq!(c.training.seed, Some(99));
        assert_eq!(c.mining.seed, Some(seed::mix(3, seed::stage_tag("mining"))));
        assert_eq!(c.selector.alpha, Some(c.training.margin));
        let once = c.clone();
        c.resolve();
        assert_eq!(c, once);
    }

    #[test]
    fn methods_parse_in_kebab_case() {
        let c: RunConfig =
            serde_json::from_str(r#"{"input": {"kind": "toy"}, "eval": {"methods": ["feature-knn", "sbs"]}}"#).unwrap();
        assert_eq!(c.eval.methods, vec![Method::FeatureKnn, Method::Sbs]);
        assert_eq!("cluster".parse::<Method>().unwrap(), Method::Cluster);
    }
}
