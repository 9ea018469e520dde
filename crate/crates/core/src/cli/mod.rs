//! File-based subcommands. Each step reads and writes plain CSV/JSON so a run
//! can be replayed or inspected one stage at a time; `pipeline` chains them.

mod config;
mod pipeline;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{ArgAction, Args, Parser, Subcommand};

pub use config::{EvalConfig, InputConfig, Method, RunConfig, SplitConfig};
pub use pipeline::{
    load_input, run_learners, run_pipeline, write_manifest, write_selections, ClusterSummary, Input, Manifest,
    PipelineOutput, RunSummary, TripletCounts,
};

use crate::baselearners::LearnerKind;
use crate::dataset::{self, Dataset, Standardizer, SyntheticSpec, TargetBounds};
use crate::eval::{self, MethodChoices};
use crate::perfspace::{self, DistanceKind, PerfMetric};
use crate::personas::{self, MiningConfig};
use crate::selector::{self, Aggregation};
use crate::siamese::{self, Activation, LossKind, ModelConfig, Optimizer, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "persona-select", version, about = "Per-instance algorithm selection with Siamese persona embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-persona dataset from a JSON spec.
    Gen(GenArgs),
    /// Fit base learners and write their predictions.
    BaseRun(BaseRunArgs),
    /// Build a performance space and export it as CSV.
    Perf(PerfArgs),
    /// Mine training triplets (radius rule, or k-means clusters with --kmeans).
    Mine(MineArgs),
    /// Train the embedding network on mined triplets.
    Train(TrainArgs),
    /// Choose an algorithm for each query row.
    Select(SelectArgs),
    /// Score selections and baselines against the test errors.
    Eval(EvalArgs),
    /// Draw pairwise performance-space scatter plots.
    Plot(PlotArgs),
    /// Run every stage from one JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A labelled CSV (`id,<features...>,target`) and its target bounds.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Target bounds as `lower,upper`.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: TargetBounds,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<Dataset> {
        dataset::load_dataset(&self.dataset, self.bounds).map_err(crate::Error::from).map_err(Into::into)
    }
}

#[derive(Debug, Args)]
pub struct LabelledArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Predictions CSV `id,<algorithm...>`.
    #[arg(long)]
    pub predictions: PathBuf,
}

impl LabelledArgs {
    fn load(&self) -> anyhow::Result<(Dataset, dataset::PredictionMatrix)> {
        let ds = self.data.load()?;
        let pm = dataset::load_predictions(&self.predictions, &ds).map_err(crate::Error::from)?;
        Ok((ds, pm))
    }
}

#[derive(Debug, Args)]
pub struct BaseRunArgs {
    /// Rows the learners are fitted on.
    #[command(flatten)]
    pub data: DataArgs,
    /// Rows to predict; defaults to the fitting rows.
    #[arg(long)]
    pub predict_on: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "mean,linear,knn,stump")]
    pub learners: Vec<LearnerKind>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerfArgs {
    #[command(flatten)]
    pub input: LabelledArgs,
    #[arg(long, default_value = "riip-mpre")]
    pub metric: PerfMetric,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub input: LabelledArgs,
    #[arg(long, default_value = "riip-mpre")]
    pub metric: PerfMetric,
    /// Mining config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pos_radius: Option<f64>,
    #[arg(long)]
    pub neg_radius: Option<f64>,
    /// Interpret radii as absolute distances instead of diameter fractions.
    #[arg(long)]
    pub absolute_radii: bool,
    #[arg(long)]
    pub distance: Option<DistanceKind>,
    #[arg(long, action = ArgAction::Set)]
    pub same_best: Option<bool>,
    #[arg(long, action = ArgAction::Set)]
    pub diff_best: Option<bool>,
    #[arg(long)]
    pub per_anchor: Option<usize>,
    /// Easy, semi-hard and hard shares, e.g. `0.3,0.4,0.3`.
    #[arg(long, value_parser = parse_mix)]
    pub mix: Option<[f64; 3]>,
    #[arg(long)]
    pub max_triplets: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mine from k-means clusters with this many centroids instead.
    #[arg(long)]
    pub kmeans: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub kmeans_max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Rows referenced by the triplets; the input standardizer is fitted here.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub triplets: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "64,32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub embedding_dim: usize,
    #[arg(long, default_value = "relu")]
    pub activation: Activation,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub normalize: bool,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value = "triplet")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value = "adam")]
    pub optimizer: Optimizer,
    #[arg(long, default_value = "euclidean")]
    pub distance: DistanceKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss and satisfaction as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// A fitted selector; otherwise one is built from --model and --reference.
    #[arg(long, conflicts_with_all = ["model", "reference"])]
    pub selector: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    pub model: Option<PathBuf>,
    /// Labelled reference set as `dataset.csv,predictions.csv`.
    #[arg(long, value_parser = parse_path_pair, requires = "model")]
    pub reference: Option<(PathBuf, PathBuf)>,
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<TargetBounds>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Neighbor cutoff; defaults to the training margin 0.2.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value = "euclidean")]
    pub distance: DistanceKind,
    #[arg(long, default_value = "mean")]
    pub aggregation: Aggregation,
    /// Where to save the selector built from --model.
    #[arg(long)]
    pub save_selector: Option<PathBuf>,
    /// Query CSV `id,<features...>[,target]`.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub train_dataset: PathBuf,
    #[arg(long)]
    pub train_predictions: PathBuf,
    #[arg(long)]
    pub test_dataset: PathBuf,
    #[arg(long)]
    pub test_predictions: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: TargetBounds,
    /// A selections CSV to score, as `name=path`. Repeatable.
    #[arg(long = "selections", value_parser = parse_named_path)]
    pub selections: Vec<(String, PathBuf)>,
    /// Baselines computed from the training set alone.
    #[arg(long, value_delimiter = ',', default_value = "feature-knn,sbs,random")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 5)]
    pub feature_knn_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Performance space CSV as written by `perf`.
    #[arg(long)]
    pub perfspace: PathBuf,
    #[arg(long, default_value = "riip-mpre")]
    pub metric: PerfMetric,
    /// Plot at most this many instances, drawn with --seed.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run seed; stage seeds set in the config still take precedence.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory, overriding `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-stage and per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got `{s}`"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected name=path, got `{s}`"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn parse_mix(s: &str) -> Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected three shares, got {}", p.len()))
}

fn parse_path_pair(s: &str) -> Result<(PathBuf, PathBuf), String> {
    match s.split_once(',') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((PathBuf::from(a), PathBuf::from(b))),
        _ => Err(format!("expected dataset.csv,predictions.csv, got `{s}`")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::BaseRun(a) => cmd_base_run(&a),
        Command::Perf(a) => cmd_perf(&a),
        Command::Mine(a) => cmd_mine(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Select(a) => cmd_select(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
    }
}

fn cmd_gen(a: &GenArgs) -> anyhow::Result<()> {
    let spec: SyntheticSpec = read_json(&a.spec)?;
    let data = dataset::generate_synthetic(&spec).map_err(crate::Error::from)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    dataset::save_dataset(&data.dataset, &a.out.join("dataset.csv")).map_err(crate::Error::from)?;
    dataset::save_predictions(&data.dataset, &data.predictions, &a.out.join("predictions.csv"))
        .map_err(crate::Error::from)?;
    dataset::save_personas(&data.dataset, &data.personas, &a.out.join("personas.csv")).map_err(crate::Error::from)?;
    Ok(())
}

fn cmd_base_run(a: &BaseRunArgs) -> anyhow::Result<()> {
    if a.learners.is_empty() {
        bail!("--learners must name at least one learner");
    }
    let train = a.data.load()?;
    let target = match &a.predict_on {
        Some(p) => dataset::load_dataset(p, a.data.bounds).map_err(crate::Error::from)?,
        None => train.clone(),
    };
    let learners = a
        .learners
        .iter()
        .map(|&k| crate::baselearners::fit(k, &train))
        .collect::<Result<Vec<_>, _>>()
        .map_err(crate::Error::from)?;
    let pm = crate::baselearners::predict_all(&learners, &target).map_err(crate::Error::from)?;
    create_parent(&a.out)?;
    dataset::save_predictions(&target, &pm, &a.out).map_err(crate::Error::from)?;
    Ok(())
}

fn cmd_perf(a: &PerfArgs) -> anyhow::Result<()> {
    let (ds, pm) = a.input.load()?;
    let space = perfspace::build_space(&ds, &pm, a.metric).map_err(crate::Error::from)?;
    create_parent(&a.out)?;
    perfspace::write_space_csv(&space, &a.out).map_err(crate::Error::from)?;
    Ok(())
}

fn mining_config(a: &MineArgs) -> anyhow::Result<MiningConfig> {
    let mut c: MiningConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => MiningConfig::default(),
    };
    if let Some(v) = a.pos_radius {
        c.pos_radius = v;
    }
    if let Some(v) = a.neg_radius {
        c.neg_radius = v;
    }
    if a.absolute_radii {
        c.radii_relative = false;
    }
    if let Some(v) = a.distance {
        c.distance = v;
    }
    if let Some(v) = a.same_best {
        c.require_same_best = v;
    }
    if let Some(v) = a.diff_best {
        c.require_diff_best = v;
    }
    if let Some(v) = a.per_anchor {
        c.triplets_per_anchor = v;
    }
    if let Some(v) = a.mix {
        c.difficulty_mix = v;
    }
    if a.max_triplets.is_some() {
        c.max_triplets = a.max_triplets;
    }
    if a.seed.is_some() {
        c.seed = a.seed;
    }
    c.validate().map_err(crate::Error::from)?;
    Ok(c)
}

fn cmd_mine(a: &MineArgs) -> anyhow::Result<()> {
    let config = mining_config(a)?;
    let (ds, pm) = a.input.load()?;
    let space = perfspace::build_space(&ds, &pm, a.metric).map_err(crate::Error::from)?;
    let triplets = match a.kmeans {
        Some(k) => {
            let seed = config.seed.unwrap_or(0);
            let clusters = personas::kmeans(&space, k, seed, a.kmeans_max_iters).map_err(crate::Error::from)?;
            personas::mine_triplets_cluster(&space, &clusters.assignment, config.triplets_per_anchor, seed)
        }
        None => personas::mine_triplets_radius(&space, &ds, &config),
    }
    .map_err(crate::Error::from)?;
    create_parent(&a.out)?;
    personas::write_triplets(&triplets, &a.out).map_err(crate::Error::from)?;
    eprintln!("{} triplets written to {}", triplets.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let ds = a.data.load()?;
    let triplets = personas::read_triplets(&a.triplets).map_err(crate::Error::from)?;
    let arch = ModelConfig {
        hidden: a.hidden.clone(),
        embedding_dim: a.embedding_dim,
        activation: a.activation,
        normalize_output: a.normalize,
        seed: Some(a.seed),
    };
    let config = TrainConfig {
        margin: a.margin,
        loss: a.loss,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        optimizer: a.optimizer,
        seed: Some(a.seed),
        distance: a.distance,
    };
    let init = siamese::init_model(&arch.layer_sizes(ds.feature_dim()), a.activation, a.normalize, a.seed)
        .map_err(crate::Error::from)?
        .with_standardizer(Standardizer::fit(&ds));
    let (model, report) = siamese::train_with_progress(&init, &triplets, &ds, &config, |e, loss, sat| {
        eprintln!("epoch {:>3}  loss {loss:.5}  satisfied {sat:.3}", e + 1);
    })
    .map_err(crate::Error::from)?;
    create_parent(&a.out)?;
    siamese::save_model(&model, &a.out).map_err(crate::Error::from)?;
    if let Some(p) = &a.report {
        create_parent(p)?;
        pipeline::write_json(&report, p)?;
    }
    Ok(())
}

fn cmd_select(a: &SelectArgs) -> anyhow::Result<()> {
    let sel = match (&a.selector, &a.model, &a.reference) {
        (Some(p), _, _) => selector::load_selector(p).map_err(crate::Error::from)?,
        (None, Some(model), Some((ref_dataset, ref_predictions))) => {
            let Some(bounds) = a.bounds else {
                bail!("--bounds is required with --reference");
            };
            let model = siamese::load_model(model).map_err(crate::Error::from)?;
            let ds = dataset::load_dataset(ref_dataset, bounds).map_err(crate::Error::from)?;
            let pm = dataset::load_predictions(ref_predictions, &ds).map_err(crate::Error::from)?;
            let sel = selector::fit_selector(&model, &ds, &pm, a.k, a.alpha, a.distance, a.aggregation)
                .map_err(crate::Error::from)?;
            if let Some(p) = &a.save_selector {
                create_parent(p)?;
                selector::save_selector(&sel, p).map_err(crate::Error::from)?;
            }
            sel
        }
        _ => bail!("pass --selector, or --model together with --reference"),
    };
    let queries = dataset::load_queries(&a.queries).map_err(crate::Error::from)?;
    let outcomes = queries
        .iter()
        .map(|(_, x)| sel.select(x))
        .collect::<Result<Vec<_>, _>>()
        .map_err(crate::Error::from)?;
    let ids: Vec<&str> = queries.iter().map(|(id, _)| id.as_str()).collect();
    create_parent(&a.out)?;
    write_selections(&ids, &outcomes, &sel.algorithm_ids, &a.out)?;
    Ok(())
}

/// Reads `id,chosen,...` and maps algorithm ids onto column indices, in the
/// order of `test`.
fn read_selections(path: &Path, test: &Dataset, algorithms: &[String]) -> anyhow::Result<(Vec<usize>, Vec<bool>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut by_id = std::collections::HashMap::new();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let (Some(id), Some(chosen)) = (rec.get(0), rec.get(1)) else {
            bail!("{}: rows need `id,chosen`", path.display());
        };
        let Some(k) = algorithms.iter().position(|a| a == chosen) else {
            bail!("{}: unknown algorithm `{chosen}`", path.display());
        };
        by_id.insert(id.to_string(), (k, rec.get(2) == Some("true")));
    }
    let mut choices = Vec::with_capacity(test.len());
    let mut fallback = Vec::with_capacity(test.len());
    for inst in test.instances() {
        let Some(&(k, f)) = by_id.get(&inst.id) else {
            bail!("{}: no selection for test instance `{}`", path.display(), inst.id);
        };
        choices.push(k);
        fallback.push(f);
    }
    Ok((choices, fallback))
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let load = |d: &Path, p: &Path| -> anyhow::Result<_> {
        let ds = dataset::load_dataset(d, a.bounds).map_err(crate::Error::from)?;
        let pm = dataset::load_predictions(p, &ds).map_err(crate::Error::from)?;
        Ok((ds, pm))
    };
    let (train, train_pm) = load(&a.train_dataset, &a.train_predictions)?;
    let (test, test_pm) = load(&a.test_dataset, &a.test_predictions)?;
    if train_pm.algorithm_ids() != test_pm.algorithm_ids() {
        bail!("train and test predictions list different algorithms");
    }
    let algorithms = test_pm.algorithm_ids();
    let mut methods = Vec::new();
    for (name, path) in &a.selections {
        let (choices, used_fallback) = read_selections(path, &test, algorithms)?;
        methods.push(MethodChoices {
            name: name.clone(),
            choices,
            used_fallback,
        });
    }
    for m in &a.methods {
        match m {
            Method::FeatureKnn => methods.push(MethodChoices::new(
                "feature-knn",
                eval::feature_knn_baseline(&train, &train_pm, &test, a.feature_knn_k).map_err(crate::Error::from)?,
            )),
            Method::Random => methods.push(MethodChoices::new(
                "random",
                eval::random_choices(test.len(), algorithms.len(), a.seed),
            )),
            Method::Sbs => {}
            Method::Siamese | Method::Cluster => {
                bail!("`{}` needs a trained selector; pass its output with --selections", m.name())
            }
        }
    }
    let test_errors = perfspace::absolute_errors(&test, &test_pm).map_err(crate::Error::from)?;
    let train_errors = perfspace::absolute_errors(&train, &train_pm).map_err(crate::Error::from)?;
    let report = eval::evaluate(&methods, &test_errors, &train_errors).map_err(crate::Error::from)?;
    create_parent(&a.out)?;
    eval::write_report(&report, &a.out).map_err(crate::Error::from)?;
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> anyhow::Result<()> {
    let mut space = perfspace::read_space_csv(&a.perfspace, a.metric).map_err(crate::Error::from)?;
    if let Some(n) = a.sample {
        space = space.sample(n, a.seed);
    }
    let written = eval::emit_scatter(&space, &a.out).map_err(crate::Error::from)?;
    eprintln!("{} plots written to {}", written.len(), a.out.display());
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs) -> anyhow::Result<()> {
    let mut config = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(out) = &a.out {
        config.out_dir = out.clone();
    }
    let output = run_pipeline(&config, !a.quiet)?;
    println!("{}", output.config.out_dir.join("report.json").display());
    Ok(())
}
