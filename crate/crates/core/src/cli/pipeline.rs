use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{InputConfig, Method, RunConfig};
use crate::baselearners::{self, LearnerKind};
use crate::dataset::{self, Dataset, PredictionMatrix, Standardizer};
use crate::eval::{self, EvalReport, MethodChoices};
use crate::perfspace::{self, PerfMetric, PerformanceSpace};
use crate::personas::{self, Difficulty, Triplet};
use crate::selector::{self, SelectionOutcome, SelectorModel};
use crate::siamese::{self, EmbeddingModel, TrainReport};
use crate::Error;

/// Labelled instances, per-algorithm predictions and, for generated data, the
/// ground-truth persona of each instance.
pub struct Input {
    pub dataset: Dataset,
    pub predictions: PredictionMatrix,
    pub personas: Option<Vec<usize>>,
}

pub fn load_input(input: &InputConfig) -> Result<Input, Error> {
    Ok(match input {
        InputConfig::Toy => {
            let (dataset, predictions) = dataset::toy::labelled();
            Input {
                dataset,
                predictions,
                personas: None,
            }
        }
        InputConfig::Synthetic { spec } => {
            let data = dataset::generate_synthetic(spec)?;
            Input {
                dataset: data.dataset,
                predictions: data.predictions,
                personas: Some(data.personas),
            }
        }
        InputConfig::Diagonal { n, feature_noise, seed } => {
            let data = dataset::generate_diagonal(*n, *feature_noise, *seed)?;
            Input {
                dataset: data.dataset,
                predictions: data.predictions,
                personas: Some(data.personas),
            }
        }
        InputConfig::Files {
            dataset: path,
            predictions,
            bounds,
            learners,
        } => {
            let ds = dataset::load_dataset(path, *bounds)?;
            let pm = match (predictions, learners) {
                (Some(p), _) => dataset::load_predictions(p, &ds)?,
                (None, Some(kinds)) => run_learners(kinds, &ds)?,
                (None, None) => return Err(Error::Config("input needs `predictions` or `learners`".into())),
            };
            Input {
                dataset: ds,
                predictions: pm,
                personas: None,
            }
        }
    })
}

/// Fits each learner on `data` and predicts the same rows.
pub fn run_learners(kinds: &[LearnerKind], data: &Dataset) -> Result<PredictionMatrix, Error> {
    let learners = kinds
        .iter()
        .map(|&k| baselearners::fit(k, data))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(baselearners::predict_all(&learners, data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletCounts {
    pub total: usize,
    pub easy: usize,
    pub semi_hard: usize,
    pub hard: usize,
}

impl TripletCounts {
    pub fn of(triplets: &[Triplet]) -> Self {
        let count = |d| triplets.iter().filter(|t| t.difficulty == d).count();
        Self {
            total: triplets.len(),
            easy: count(Difficulty::Easy),
            semi_hard: count(Difficulty::SemiHard),
            hard: count(Difficulty::Hard),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub triplets: usize,
    pub final_satisfaction: f64,
}

/// Diagnostics that do not fit the per-method report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub algorithms: Vec<String>,
    pub sbs: String,
    pub alpha: f64,
    pub triplets: TripletCounts,
    pub final_loss: f64,
    pub final_satisfaction: f64,
    /// Triplets mined on the test split alone, with the same mining config.
    pub held_out_triplets: usize,
    /// `None` when no triplet could be mined on the test split.
    pub held_out_satisfaction: Option<f64>,
    pub radius_purity: f64,
    pub kmeans_purity: f64,
    pub dispersion_riip_mpre: f64,
    pub dispersion_absolute_error: f64,
    pub cluster: Option<ClusterSummary>,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub config: RunConfig,
    pub report: EvalReport,
    pub summary: RunSummary,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_selections(
    ids: &[&str],
    outcomes: &[SelectionOutcome],
    algorithm_ids: &[String],
    path: &Path,
) -> Result<(), Error> {
    let io = |e: csv::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["id", "chosen", "used_fallback", "n_neighbors"]).map_err(io)?;
    for (id, o) in ids.iter().zip(outcomes) {
        w.write_record([
            *id,
            algorithm_ids[o.chosen].as_str(),
            if o.used_fallback { "true" } else { "false" },
            &o.neighbors_used.len().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_split(train: &Dataset, test: &Dataset, path: &Path) -> Result<(), Error> {
    let io = |e: csv::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["id", "split"]).map_err(io)?;
    for (data, side) in [(train, "train"), (test, "test")] {
        for id in data.ids() {
            w.write_record([id, side]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), Error> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if key != "manifest.json" {
                out.insert(key, sha256_file(&path)?);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    /// Relative path to sha256 hex digest, for every file in the run directory.
    pub files: BTreeMap<String, String>,
}

pub fn write_manifest(config: &RunConfig, dir: &Path) -> Result<Manifest, Error> {
    let mut files = BTreeMap::new();
    collect_files(dir, dir, &mut files)?;
    let manifest = Manifest {
        config: config.clone(),
        files,
    };
    write_json(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}

fn selector_choices(name: &str, outcomes: &[SelectionOutcome]) -> MethodChoices {
    MethodChoices {
        name: name.to_string(),
        choices: outcomes.iter().map(|o| o.chosen).collect(),
        used_fallback: outcomes.iter().map(|o| o.used_fallback).collect(),
    }
}

struct Stage<'a> {
    config: &'a RunConfig,
    verbose: bool,
}

impl Stage<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[pipeline] {}", msg.as_ref());
        }
    }

    fn train(
        &self,
        tag: &str,
        init: &EmbeddingModel,
        triplets: &[Triplet],
        train: &Dataset,
    ) -> Result<(EmbeddingModel, TrainReport), Error> {
        let verbose = self.verbose;
        Ok(siamese::train_with_progress(init, triplets, train, &self.config.training, |e, loss, sat| {
            if verbose {
                eprintln!("[{tag}] epoch {:>3}  loss {loss:.5}  satisfied {sat:.3}", e + 1);
            }
        })?)
    }

    fn fit_selector(&self, model: &EmbeddingModel, train: &Dataset, pm: &PredictionMatrix) -> Result<SelectorModel, Error> {
        let s = &self.config.selector;
        let alpha = s.alpha.unwrap_or(self.config.training.margin);
        Ok(selector::fit_selector(model, train, pm, s.k, alpha, s.distance, s.aggregation)?)
    }
}

/// Runs every stage and writes all artifacts under `config.out_dir`.
/// `manifest.json` is written last, so its presence marks a complete run.
pub fn run_pipeline(config: &RunConfig, verbose: bool) -> Result<PipelineOutput, Error> {
    let mut config = config.clone();
    config.resolve();
    config.validate()?;
    let stage = Stage {
        config: &config,
        verbose,
    };
    let out = config.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let _ = std::fs::remove_file(out.join("manifest.json"));
    let at = |name: &str| -> PathBuf { out.join(name) };

    let input = load_input(&config.input)?;
    stage.log(format!(
        "{} instances, {} features, {} algorithms",
        input.dataset.len(),
        input.dataset.feature_dim(),
        input.predictions.algorithm_count()
    ));
    dataset::save_dataset(&input.dataset, &at("dataset.csv"))?;
    dataset::save_predictions(&input.dataset, &input.predictions, &at("predictions.csv"))?;
    if let Some(p) = &input.personas {
        dataset::save_personas(&input.dataset, p, &at("personas.csv"))?;
    }

    let seed_of = |s: Option<u64>| s.expect("seeds are resolved");
    let train_frac = config.split.train;
    let (train, test) = dataset::split(
        &input.dataset,
        &input.predictions,
        (train_frac, 1.0 - train_frac),
        seed_of(config.split.seed),
    )?;
    write_split(&train.data, &test.data, &at("split.csv"))?;
    stage.log(format!("split: {} train, {} test", train.data.len(), test.data.len()));

    let space = perfspace::build_space(&train.data, &train.predictions, config.metric)?;
    perfspace::write_space_csv(&space, &at("perfspace.csv"))?;

    let triplets = personas::mine_triplets_radius(&space, &train.data, &config.mining)?;
    personas::write_triplets(&triplets, &at("triplets.csv"))?;
    let counts = TripletCounts::of(&triplets);
    stage.log(format!(
        "mined {} triplets ({} easy, {} semi-hard, {} hard)",
        counts.total, counts.easy, counts.semi_hard, counts.hard
    ));

    let init = siamese::init_model(
        &config.model.layer_sizes(train.data.feature_dim()),
        config.model.activation,
        config.model.normalize_output,
        seed_of(config.model.seed),
    )?
    .with_standardizer(Standardizer::fit(&train.data));
    let (model, train_report) = stage.train("siamese", &init, &triplets, &train.data)?;
    siamese::save_model(&model, &at("model.json"))?;
    write_json(&train_report, &at("training.json"))?;

    let sel = stage.fit_selector(&model, &train.data, &train.predictions)?;
    selector::save_selector(&sel, &at("selector.json"))?;
    let outcomes = sel.select_batch(&test.data)?;
    let test_ids: Vec<&str> = test.data.ids().collect();
    write_selections(&test_ids, &outcomes, &sel.algorithm_ids, &at("selections.csv"))?;

    let n_train = train.data.len();
    let m = input.predictions.algorithm_count();
    let k_clusters = config.eval.cluster_k.min(n_train);
    let clusters = personas::kmeans(
        &space,
        k_clusters,
        seed_of(config.eval.kmeans_seed),
        config.eval.kmeans_max_iters,
    )?;

    let mut methods = Vec::new();
    let mut cluster_summary = None;
    for method in &config.eval.methods {
        match method {
            Method::Siamese => methods.push(selector_choices("siamese", &outcomes)),
            Method::FeatureKnn => methods.push(MethodChoices::new(
                "feature-knn",
                eval::feature_knn_baseline(&train.data, &train.predictions, &test.data, config.eval.feature_knn_k)?,
            )),
            Method::Cluster => {
                let cluster_triplets = personas::mine_triplets_cluster(
                    &space,
                    &clusters.assignment,
                    config.mining.triplets_per_anchor,
                    seed_of(config.mining.seed),
                )?;
                let (cluster_model, report) = stage.train("cluster", &init, &cluster_triplets, &train.data)?;
                let cluster_sel = stage.fit_selector(&cluster_model, &train.data, &train.predictions)?;
                methods.push(selector_choices("cluster", &cluster_sel.select_batch(&test.data)?));
                cluster_summary = Some(ClusterSummary {
                    k: k_clusters,
                    triplets: cluster_triplets.len(),
                    final_satisfaction: report.epoch_satisfaction.last().copied().unwrap_or(0.0),
                });
            }
            Method::Sbs => {}
            Method::Random => methods.push(MethodChoices::new(
                "random",
                eval::random_choices(test.data.len(), m, seed_of(config.eval.random_seed)),
            )),
        }
    }
    let test_errors = perfspace::absolute_errors(&test.data, &test.predictions)?;
    let train_errors = perfspace::absolute_errors(&train.data, &train.predictions)?;
    let report = eval::evaluate(&methods, &test_errors, &train_errors)?;
    eval::write_report(&report, &at("report.json"))?;
    for r in &report.records {
        stage.log(format!(
            "{:<12} mae {:.4}  accuracy {:.3}  regret {:.4}  gap_closed {}",
            r.method,
            r.deployed_mae,
            r.selection_accuracy,
            r.regret,
            r.gap_closed.map_or("null".to_string(), |g| format!("{g:.3}"))
        ));
    }

    let test_space = perfspace::build_space(&test.data, &test.predictions, config.metric)?;
    let held_out = personas::mine_triplets_radius(&test_space, &test.data, &config.mining).unwrap_or_default();
    let held_out_satisfaction = if held_out.is_empty() {
        None
    } else {
        Some(siamese::triplet_satisfaction(
            &model,
            &held_out,
            &test.data,
            config.training.margin,
            config.training.distance,
        )?)
    };

    let radius = personas::radius_assignment(&space, &config.mining)?;
    let plot_seed = seed_of(config.eval.plot_seed);
    let full_riip = perfspace::build_space(&input.dataset, &input.predictions, PerfMetric::RiipMpre)?;
    let full_abs = perfspace::build_space(&input.dataset, &input.predictions, PerfMetric::AbsoluteError)?;
    let summary = RunSummary {
        n_train,
        n_test: test.data.len(),
        algorithms: sel.algorithm_ids.clone(),
        sbs: sel.algorithm_ids[sel.fallback].clone(),
        alpha: sel.alpha,
        triplets: counts,
        final_loss: train_report.epoch_loss.last().copied().unwrap_or(0.0),
        final_satisfaction: train_report.epoch_satisfaction.last().copied().unwrap_or(0.0),
        held_out_triplets: held_out.len(),
        held_out_satisfaction,
        radius_purity: personas::persona_purity(&radius, &space)?,
        kmeans_purity: personas::persona_purity(&clusters.assignment, &space)?,
        dispersion_riip_mpre: perfspace::dispersion(&full_riip, config.eval.plot_sample, plot_seed),
        dispersion_absolute_error: perfspace::dispersion(&full_abs, config.eval.plot_sample, plot_seed),
        cluster: cluster_summary,
    };
    write_json(&summary, &at("summary.json"))?;

    let plotted: PerformanceSpace = space.sample(config.eval.plot_sample, plot_seed);
    eval::emit_scatter(&plotted, &at("plots"))?;

    write_manifest(&config, &out)?;
    stage.log(format!("artifacts in {}", out.display()));
    Ok(PipelineOutput {
        config,
        report,
        summary,
    })
}
