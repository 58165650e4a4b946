//! Command-line entry point: `train`, `eval`, `verify` and `synth`.
//!
//! Every `train` run writes, per seed, `seed-<s>/checkpoint.tsv`,
//! `history.tsv`, `metrics.tsv` and `manifest.json`, plus a top-level
//! `metrics.tsv` (with `mean±std` rows) and `manifest.json`. Passing a
//! manifest back through `train --manifest` reruns it; all kernels are
//! single-threaded, so the rerun is bitwise identical.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_links, fit_logistic, link_rows, node_rows, render_report, LogisticConfig, MetricRow, NodeMetrics,
};
use crate::graph::AmhenGraph;
use crate::ingest::{load_dataset, split_links, split_nodes, write_dataset, DatasetPaths, Partition, SplitRatios};
use crate::model::{forward, Mode, ModelParams, Normalization};
use crate::oracle::verify_power_equivalence;
use crate::synth::{generate, SynthConfig};
use crate::training::{node_metrics, render_history, train, Ablation, SplitRef, Task, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const TOOL: &str = "mhgcn";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "mhgcn", version, about = "Multiplex heterogeneous graph convolution")]
pub struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Dataset directory (meta.tsv, edges.tsv, features.tsv, labels.tsv).
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Seed for splits, initialization, dropout and negative sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Recorded in the manifest; every kernel is single-threaded, so runs
    /// are deterministic either way.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split, train, evaluate on the test partition and write artifacts.
    Train(TrainArgs),
    /// Recompute test metrics from a checkpoint or a finished run.
    Eval(EvalArgs),
    /// Check matrix powers of the aggregated adjacency against walk sums.
    Verify(VerifyArgs),
    /// Write a synthetic dataset with planted class structure.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Link,
    Node,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Link => Task::Link,
            TaskArg::Node => Task::Node,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AblationArg {
    None,
    FreezeBeta,
    LastLayerOnly,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::None => Ablation::None,
            AblationArg::FreezeBeta => Ablation::FreezeBeta,
            AblationArg::LastLayerOnly => Ablation::LastLayerOnly,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, required_unless_present = "manifest")]
    task: Option<TaskArg>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 200)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.0005)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Defaults to 500 for link prediction and 200 for node classification.
    #[arg(long)]
    epochs: Option<usize>,
    /// Negatives per training positive, redrawn every epoch.
    #[arg(long, default_value_t = 1)]
    negatives: usize,
    #[arg(long, value_enum, default_value = "none")]
    ablation: AblationArg,
    /// Row-normalize each relation's adjacency before mixing.
    #[arg(long)]
    normalize: bool,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Split labeled nodes without class stratification.
    #[arg(long)]
    no_stratify: bool,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Rerun the configuration recorded in a manifest.
    #[arg(long, value_name = "FILE", conflicts_with = "task")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["checkpoint", "run"]))]
struct EvalArgs {
    /// Checkpoint to evaluate on --data with the split for --seed.
    #[arg(long, value_name = "FILE", requires = "task")]
    checkpoint: Option<PathBuf>,
    /// Directory written by `train`; every seed is re-evaluated.
    #[arg(long, value_name = "DIR")]
    run: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    no_stratify: bool,
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Longest walk length checked.
    #[arg(long, default_value_t = 3)]
    max_l: usize,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Relation weights, comma separated; all ones when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Option<Vec<f64>>,
    /// Directory for report.txt, deviations.tsv and manifest.json.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    nodes: usize,
    /// Same edge densities without any class dependence.
    #[arg(long)]
    null: bool,
    /// JSON generator configuration replacing the built-in benchmark
    /// (--nodes is then ignored).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

/// Record written next to every run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Configuration with every default filled in; `config.seed` is the
    /// first seed.
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub stratified: bool,
    pub deterministic: bool,
    pub data: PathBuf,
    /// SHA-256 of each input file, by file name.
    pub inputs: BTreeMap<String, String>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), &to_json(self))
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(&cli.common, a),
        Command::Eval(a) => cmd_eval(&cli.common, a),
        Command::Verify(a) => cmd_verify(&cli.common, a),
        Command::Synth(a) => cmd_synth(&cli.common, a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Writes to standard output, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into());
            Ok((name, sha256_file(p)?))
        })
        .collect()
}

/// Resolves a dataset directory that must exist.
fn data_dir(dir: Option<&Path>) -> CliResult<PathBuf> {
    let dir = dir.ok_or_else(|| CliError::Usage("--data DIR is required".into()))?;
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("dataset directory {} does not exist", dir.display())));
    }
    dir.canonicalize().map_err(|e| Error::io(dir, e).into())
}

fn has_labels(g: &AmhenGraph) -> bool {
    g.labels().iter().any(Option::is_some)
}

/// Test-partition metrics of `params` for one seed. Link runs also fit a
/// logistic-regression classifier on the embeddings when labels exist
/// (task `node_lr`).
pub fn evaluate_params(
    g: &AmhenGraph,
    params: &ModelParams,
    task: Task,
    seed: u64,
    stratified: bool,
) -> Result<Vec<MetricRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        Task::Link => {
            let split = split_links(g, SplitRatios::LINK, seed)?;
            let train_graph = split.training_graph(g)?;
            let h = forward(&train_graph, params, Mode::Eval, &mut rng)?.fused;
            let mut rows = link_rows(&evaluate_links(&h, &split, Partition::Test)?, seed);
            if has_labels(g) {
                match split_nodes(g, SplitRatios::NODE, seed, stratified) {
                    Ok(nodes) => {
                        let label = |ids: &[usize]| -> Vec<usize> {
                            ids.iter().map(|&i| g.labels()[i].expect("split nodes are labeled")).collect()
                        };
                        let clf = fit_logistic(
                            h.select(Axis(0), &nodes.train).view(),
                            &label(&nodes.train),
                            g.num_classes(),
                            &LogisticConfig::default(),
                        )?;
                        let pred = clf.predict(h.select(Axis(0), &nodes.test).view());
                        let m = NodeMetrics::of(&pred, &label(&nodes.test))?;
                        rows.extend(node_rows("node_lr", &m, seed));
                    }
                    Err(e) => warn!("skipping downstream classification: {e}"),
                }
            }
            Ok(rows)
        }
        Task::Node => {
            let split = split_nodes(g, SplitRatios::NODE, seed, stratified)?;
            let h = forward(g, params, Mode::Eval, &mut rng)?.fused;
            Ok(node_rows("node", &node_metrics(&h, params, g, &split.test)?, seed))
        }
    }
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn train_config(a: &TrainArgs, seed: u64) -> TrainConfig {
    let task: Task = a.task.expect("required unless --manifest").into();
    let mut cfg = TrainConfig::new(task);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.lr = a.lr;
    cfg.weight_decay = a.weight_decay;
    cfg.dropout = a.dropout;
    cfg.layers = a.layers;
    cfg.dim = a.dim;
    cfg.seed = seed;
    cfg.negatives_per_positive = a.negatives;
    cfg.ablation = a.ablation.into();
    if a.normalize {
        cfg.normalization = Normalization::Row;
    }
    cfg
}

fn cmd_train(common: &Common, a: &TrainArgs) -> CliResult<i32> {
    let mut manifest = match &a.manifest {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Usage(format!("manifest {} does not exist", path.display())));
            }
            let m = RunManifest::load(path)?;
            if m.command != "train" {
                return Err(CliError::Usage(format!("{} is not a train manifest", path.display())));
            }
            m
        }
        None => {
            if a.seeds == 0 {
                return Err(CliError::Usage("--seeds must be at least 1".into()));
            }
            let config = train_config(a, common.seed);
            config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            RunManifest {
                tool: TOOL.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: "train".into(),
                seeds: (0..a.seeds as u64).map(|i| common.seed + i).collect(),
                config,
                stratified: !a.no_stratify,
                deterministic: common.deterministic,
                data: data_dir(common.data.as_deref())?,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
            }
        }
    };
    if !manifest.data.is_dir() {
        return Err(CliError::Usage(format!("dataset directory {} does not exist", manifest.data.display())));
    }
    let paths = DatasetPaths::in_dir(&manifest.data);
    let inputs = digests(&paths.all())?;
    if a.manifest.is_some() && inputs != manifest.inputs {
        return Err(Error::Invalid("input files differ from those recorded in the manifest".into()).into());
    }
    manifest.inputs = inputs;
    let g = load_dataset(&paths)?;
    if manifest.config.task == Task::Node && !has_labels(&g) {
        return Err(Error::Invalid("node classification needs labels.tsv".into()).into());
    }

    create_dir(&a.out)?;
    let mut all_rows = Vec::new();
    let mut outputs = Vec::new();
    for &seed in &manifest.seeds {
        let mut cfg = manifest.config.clone();
        cfg.seed = seed;
        let outcome = match cfg.task {
            Task::Link => {
                let split = split_links(&g, SplitRatios::LINK, seed)?;
                train(&g, SplitRef::Link(&split), &cfg)?
            }
            Task::Node => {
                let split = split_nodes(&g, SplitRatios::NODE, seed, manifest.stratified)?;
                train(&g, SplitRef::Node(&split), &cfg)?
            }
        };
        let rows = evaluate_params(&g, &outcome.params, cfg.task, seed, manifest.stratified)?;

        let dir = seed_dir(&a.out, seed);
        create_dir(&dir)?;
        checkpoint::save(&outcome.params, &dir.join("checkpoint.tsv"))?;
        write_file(&dir.join("history.tsv"), &render_history(&outcome.history))?;
        write_file(&dir.join("metrics.tsv"), &render_report(&rows))?;
        let files = ["checkpoint.tsv", "history.tsv", "metrics.tsv"];
        RunManifest {
            config: cfg,
            seeds: vec![seed],
            outputs: files.iter().map(|f| f.to_string()).collect(),
            ..manifest.clone()
        }
        .save(&dir)?;
        outputs.extend(files.iter().chain([&MANIFEST_FILE]).map(|f| format!("seed-{seed}/{f}")));

        let headline = rows.iter().find(|r| r.target == "mean" || r.task == "node").expect("non-empty report");
        emit(&format!(
            "seed {seed}: best epoch {} of {}, test {} {} = {:.4}\n",
            outcome.best_epoch, manifest.config.epochs, headline.target, headline.metric, headline.value
        ));
        info!("seed {seed} artifacts in {}", dir.display());
        all_rows.extend(rows);
    }

    let report = render_report(&all_rows);
    write_file(&a.out.join("metrics.tsv"), &report)?;
    outputs.push("metrics.tsv".into());
    manifest.outputs = outputs;
    manifest.save(&a.out)?;
    emit(&report);
    Ok(EXIT_OK)
}

fn cmd_eval(common: &Common, a: &EvalArgs) -> CliResult<i32> {
    let rows = if let Some(run) = &a.run {
        let path = run.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(CliError::Usage(format!("no run manifest at {}", path.display())));
        }
        let manifest = RunManifest::load(&path)?;
        let data = match &common.data {
            Some(d) => data_dir(Some(d))?,
            None => manifest.data.clone(),
        };
        let g = load_dataset(&DatasetPaths::in_dir(&data))?;
        let mut rows = Vec::new();
        for &seed in &manifest.seeds {
            let params = checkpoint::load(&seed_dir(run, seed).join("checkpoint.tsv"))?;
            rows.extend(evaluate_params(&g, &params, manifest.config.task, seed, manifest.stratified)?);
        }
        rows
    } else {
        let path = a.checkpoint.as_ref().expect("argument group requires one source");
        if !path.is_file() {
            return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
        }
        let data = data_dir(common.data.as_deref())?;
        let params = checkpoint::load(path)?;
        let g = load_dataset(&DatasetPaths::in_dir(&data))?;
        let task = a.task.expect("--checkpoint requires --task").into();
        evaluate_params(&g, &params, task, common.seed, !a.no_stratify)?
    };
    let report = render_report(&rows);
    match &a.out {
        Some(path) => write_file(path, &report)?,
        None => emit(&report),
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VerifyManifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    data: &'a Path,
    inputs: BTreeMap<String, String>,
    beta: &'a [f64],
    max_l: usize,
    tolerance: f64,
    passed: bool,
    outputs: [&'a str; 2],
}

fn cmd_verify(common: &Common, a: &VerifyArgs) -> CliResult<i32> {
    let data = data_dir(common.data.as_deref())?;
    let paths = DatasetPaths::in_dir(&data);
    let g = load_dataset(&paths)?;
    let beta = a.beta.clone().unwrap_or_else(|| vec![1.0; g.num_edge_types()]);
    if beta.len() != g.num_edge_types() {
        return Err(CliError::Usage(format!(
            "--beta has {} values but the dataset has {} edge types",
            beta.len(),
            g.num_edge_types()
        )));
    }
    if a.max_l == 0 {
        return Err(CliError::Usage("--max-l must be at least 1".into()));
    }
    let report = verify_power_equivalence(&g, &beta, a.max_l, a.tolerance)?;
    let text = report.render_text();
    emit(&text);
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join("report.txt"), &text)?;
            write_file(&dir.join("deviations.tsv"), &report.render_tsv())?;
            let manifest = VerifyManifest {
                tool: TOOL,
                version: env!("CARGO_PKG_VERSION"),
                command: "verify",
                data: &data,
                inputs: digests(&paths.all())?,
                beta: &beta,
                max_l: a.max_l,
                tolerance: a.tolerance,
                passed: report.passed,
                outputs: ["report.txt", "deviations.tsv"],
            };
            write_file(&dir.join(MANIFEST_FILE), &to_json(&manifest))?;
        }
        None => emit(&report.render_tsv()),
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILURE })
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    config: &'a SynthConfig,
    outputs: &'a BTreeMap<String, String>,
}

fn cmd_synth(common: &Common, a: &SynthArgs) -> CliResult<i32> {
    if a.nodes == 0 {
        return Err(CliError::Usage("--nodes must be positive".into()));
    }
    let mut config = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::planted_benchmark(a.nodes),
    };
    if a.null {
        config = config.without_class_signal();
    }
    let out = generate(&config, common.seed)?;
    create_dir(&a.out)?;
    let paths = write_dataset(&out.graph, &a.out)?;
    let outputs = digests(&paths.all())?;
    let manifest = SynthManifest {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        command: "synth",
        seed: common.seed,
        config: &config,
        outputs: &outputs,
    };
    write_file(&a.out.join(MANIFEST_FILE), &to_json(&manifest))?;
    for (file, digest) in &outputs {
        emit(&format!("{digest}  {file}\n"));
    }
    Ok(EXIT_OK)
}
