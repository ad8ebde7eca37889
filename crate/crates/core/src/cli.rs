//! Command-line front end. Every command writes its artifacts and a
//! `manifest.toml` under `--out`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{edge_attributes, knn_graph, knn_graph_points, radius_graph, write_edge_list};
use crate::io::{load_capture, read_ply, save_capture, simplified_hha, write_ply};
use crate::model::{
    capture_dirs, evaluate, fusion_samples, hha_clouds, layer_gradient_errors, load_captures, synth_dataset, train, BranchConfig,
    ExperimentConfig, FusionModel, GeometricModel, Preset, SynthSpec, SynthVariant, TrainOptions, TrainOutcome, Trainable,
};
use crate::nn::{Checkpoint, ClassWeights};
use crate::pooling::PoolingKind;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const GEOMETRIC_CHECKPOINT: &str = "geometric.ckpt";

/// Largest finite-difference error `grad-check` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-5;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "geofuse",
    version,
    about = "Graph convolutions and 2D-3D fusion for RGB-D scene classification"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output of the run.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threads for data-parallel work; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled synthetic dataset of captures.
    SynthGen {
        #[arg(long, value_enum, default_value_t = SynthVariant::Shapes3)]
        variant: SynthVariant,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Convert capture directories to HHA point clouds in PLY form.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write the neighbourhood graph of a PLY cloud as an edge list.
    DumpGraph {
        #[arg(long = "in")]
        input: PathBuf,
        /// Neighbourhood size; defaults to the configured branch value.
        #[arg(long, conflicts_with = "radius")]
        k: Option<usize>,
        /// Use a radius graph instead of kNN.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, value_enum, default_value_t = GraphSpace::Euclidean)]
        space: GraphSpace,
    },
    /// Train the geometric branch and classifier.
    #[command(name = "train-3d")]
    Train3d {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Train the fusion stage on top of a trained geometric run.
    TrainFusion {
        /// Output directory of a `train-3d` run.
        #[arg(long)]
        geometric: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Score a trained run on a directory of captures.
    Eval {
        /// Output directory of a training run.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate the final instead of the best checkpoint.
        #[arg(long)]
        last: bool,
    },
    /// Finite-difference check of every layer of the configured model.
    GradCheck,
    /// Compare voxel and nearest voxel pooling on a PLY cloud.
    BenchPool {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        r: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphSpace {
    Euclidean,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Geometric,
    Fusion,
}

/// Written by every command; enough to repeat the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Arguments as given, minus `--out`.
    pub args: Vec<String>,
    pub seed: u64,
    pub workers: usize,
    pub versions: Versions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelInfo>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub geofuse: String,
    pub checkpoint_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            geofuse: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: crate::nn::checkpoint::FORMAT_VERSION,
        }
    }
}

/// What `eval` needs to rebuild a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub kind: ModelKind,
    pub classes: usize,
    pub class_weights: Vec<f64>,
    pub best_epoch: usize,
    /// Branch producing the fusion inputs (fusion runs only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometric_branch: Option<BranchConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texture_dim: Option<usize>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        toml::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args = recorded_args(&argv);
    match execute(cli, args) {
        Ok(code) => code,
        Err(e) => {
            let (kind, code) = categorize(&e);
            eprintln!("error ({kind}): {e}");
            code
        }
    }
}

pub fn categorize(e: &Error) -> (&'static str, i32) {
    match e {
        Error::InvalidArgument(_) => ("usage", EXIT_USAGE),
        Error::Numeric(_) => ("numeric", EXIT_NUMERIC),
        _ => ("data", EXIT_DATA),
    }
}

/// Program arguments without the binary name and without `--out`, so the
/// manifest does not depend on where the run was written.
fn recorded_args(argv: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut iter = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned());
    while let Some(a) = iter.next() {
        if a == "--out" {
            iter.next();
        } else if !a.starts_with("--out=") {
            out.push(a);
        }
    }
    out
}

/// Config file, then preset and seed flags on top.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut table = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingFile(path.clone()));
            }
            fs::read_to_string(path)?
                .parse::<toml::Table>()
                .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    if let Some(p) = common.preset {
        table.insert(
            "preset".into(),
            toml::Value::try_from(p).map_err(|e| Error::format(e.to_string()))?,
        );
    }
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::invalid("seed must fit in a signed 64-bit integer"))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    ExperimentConfig::from_toml(&table.to_string())
}

struct Run {
    out: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn new(common: &Common, command: &str, args: Vec<String>, config: ExperimentConfig) -> Result<Self> {
        let out = common.out.clone().ok_or_else(|| Error::invalid("--out is required"))?;
        if common.workers == 0 {
            return Err(Error::invalid("--workers must be at least 1"));
        }
        fs::create_dir_all(&out)?;
        Ok(Self {
            out,
            manifest: Manifest {
                command: command.to_string(),
                args,
                seed: config.seed,
                workers: common.workers,
                versions: Versions::default(),
                synth: None,
                model: None,
                config,
            },
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(self) -> Result<()> {
        let text = toml::to_string(&self.manifest).map_err(|e| Error::format(e.to_string()))?;
        fs::write(self.path(MANIFEST_FILE), text)?;
        Ok(())
    }
}

fn execute(cli: Cli, args: Vec<String>) -> Result<i32> {
    let common = cli.common;
    let config = resolve_config(&common)?;
    let workers = common.workers;
    let name = command_name(&cli.command);
    let mut run = Run::new(&common, name, args, config)?;
    let cfg = run.manifest.config.clone();
    let mut code = 0;

    match cli.command {
        Command::SynthGen { variant, train, test } => {
            let defaults = SynthSpec::default();
            let spec = SynthSpec {
                variant,
                train: train.unwrap_or(defaults.train),
                test: test.unwrap_or(defaults.test),
                ..defaults
            };
            let data = synth_dataset(&spec, cfg.seed)?;
            for (split, captures) in [("train", &data.train), ("test", &data.test)] {
                for (i, c) in captures.iter().enumerate() {
                    save_capture(c, run.path(split).join(format!("{i:05}")))?;
                }
            }
            println!(
                "{} train / {} test captures, {} classes",
                data.train.len(),
                data.test.len(),
                data.classes
            );
            run.manifest.synth = Some(spec);
        }
        Command::Preprocess { input } => {
            let dirs = if input.join(crate::io::capture::DEPTH_FILE).exists() {
                vec![input.clone()]
            } else {
                capture_dirs(&input)?
            };
            for dir in &dirs {
                let capture = load_capture(dir)?;
                let cloud = simplified_hha(&capture.depth, &capture.intrinsics, cfg.data.stride)?.with_label(capture.label);
                let stem = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "capture".into());
                write_ply(&cloud, run.path(&format!("{stem}.ply")))?;
            }
            println!("{} clouds", dirs.len());
        }
        Command::DumpGraph { input, k, radius, space } => {
            let cloud = read_ply(&input)?;
            let graph = match (radius, space) {
                (Some(r), GraphSpace::Euclidean) => radius_graph(&cloud.positions, r)?,
                (Some(_), GraphSpace::Feature) => return Err(Error::invalid("radius graphs are Euclidean only")),
                (None, GraphSpace::Euclidean) => knn_graph_points(&cloud.positions, k.unwrap_or(cfg.branch.k), true)?,
                (None, GraphSpace::Feature) => knn_graph(&cloud.features, k.unwrap_or(cfg.branch.k), true)?,
            };
            let attrs = edge_attributes(&graph, &cloud.positions, Some(&cloud.features), cfg.branch.attributes)?;
            let mut w = std::io::BufWriter::new(fs::File::create(run.path("edges.txt"))?);
            write_edge_list(&graph, Some(&attrs), &mut w)?;
            w.flush()?;
            println!("{} nodes, {} edges", graph.num_nodes(), graph.num_edges());
        }
        Command::Train3d {
            train: train_dir,
            test: test_dir,
        } => {
            let (train_dir, test_dir) = data_dirs(&cfg, train_dir, test_dir)?;
            let train_set = hha_clouds(&load_captures(&train_dir, workers)?, cfg.data.stride, workers)?;
            let test_set = match &test_dir {
                Some(d) => hha_clouds(&load_captures(d, workers)?, cfg.data.stride, workers)?,
                None => Vec::new(),
            };
            let classes = class_count(train_set.iter().chain(&test_set).filter_map(|c| c.label))?;
            let mut model = GeometricModel::new(
                &cfg.branch,
                classes,
                cfg.optimizer.dropout,
                cfg.augmentation.clone(),
                cfg.seed,
            )?;
            let opts = TrainOptions {
                optimizer: cfg.optimizer.clone(),
                seed: cfg.seed,
                workers,
            };
            let outcome = train(&mut model, &train_set, &test_set, &opts, print_epoch)?;
            write_training(&run, &outcome, &model.store)?;
            run.manifest.model = Some(ModelInfo {
                kind: ModelKind::Geometric,
                classes,
                class_weights: outcome.class_weights.weights.clone(),
                best_epoch: outcome.best_epoch,
                geometric_branch: None,
                texture_dim: None,
            });
        }
        Command::TrainFusion {
            geometric,
            train: train_dir,
            test: test_dir,
        } => {
            let (train_dir, test_dir) = data_dirs(&cfg, train_dir, test_dir)?;
            let geo = load_geometric(&geometric)?;
            fs::copy(geometric.join(BEST_CHECKPOINT), run.path(GEOMETRIC_CHECKPOINT))?;
            let train_set = fusion_samples(&geo, &load_captures(&train_dir, workers)?, cfg.data.stride, workers)?;
            let test_set = match &test_dir {
                Some(d) => fusion_samples(&geo, &load_captures(d, workers)?, cfg.data.stride, workers)?,
                None => Vec::new(),
            };
            let texture_dim = train_set
                .first()
                .ok_or_else(|| Error::InvalidDataset("empty training set".into()))?
                .texture
                .feature_dim();
            let classes = class_count(train_set.iter().chain(&test_set).map(|s| s.label))?.max(geo.classes());
            let mut model = FusionModel::new(&cfg.fusion, geo.branch.output_dim(), texture_dim, classes, cfg.seed)?;
            let opts = TrainOptions {
                optimizer: cfg.fusion.optimizer.clone(),
                seed: cfg.seed,
                workers,
            };
            let outcome = train(&mut model, &train_set, &test_set, &opts, print_epoch)?;
            write_training(&run, &outcome, &model.store)?;
            run.manifest.model = Some(ModelInfo {
                kind: ModelKind::Fusion,
                classes,
                class_weights: outcome.class_weights.weights.clone(),
                best_epoch: outcome.best_epoch,
                geometric_branch: Some(geo.branch.config.clone()),
                texture_dim: Some(texture_dim),
            });
        }
        Command::Eval { model, data, last } => {
            let trained = Manifest::load(&model)?;
            let info = trained
                .model
                .clone()
                .ok_or_else(|| Error::InvalidDataset(format!("{} is not a training run", model.display())))?;
            let checkpoint = Checkpoint::load(model.join(if last { LAST_CHECKPOINT } else { BEST_CHECKPOINT }))?;
            let weights = ClassWeights {
                frequencies: vec![1.0 / info.classes as f64; info.classes],
                weights: info.class_weights.clone(),
            };
            let captures = load_captures(&data, workers)?;
            let stride = trained.config.data.stride;
            let (loss, report) = match info.kind {
                ModelKind::Geometric => {
                    let mut m = geometric_model(&trained.config.branch, &trained.config, info.classes)?;
                    checkpoint.apply_to(&mut m.store)?;
                    evaluate(&m, &hha_clouds(&captures, stride, workers)?, &weights, workers)?
                }
                ModelKind::Fusion => {
                    let branch = info
                        .geometric_branch
                        .as_ref()
                        .ok_or_else(|| Error::format("fusion manifest lacks the geometric branch"))?;
                    let mut geo = geometric_model(branch, &trained.config, info.classes)?;
                    Checkpoint::load(model.join(GEOMETRIC_CHECKPOINT))?.apply_to(&mut geo.store)?;
                    let texture_dim = info
                        .texture_dim
                        .ok_or_else(|| Error::format("fusion manifest lacks texture_dim"))?;
                    let mut m = FusionModel::new(
                        &trained.config.fusion,
                        geo.branch.output_dim(),
                        texture_dim,
                        info.classes,
                        trained.seed,
                    )?;
                    checkpoint.apply_to(&mut m.store)?;
                    evaluate(&m, &fusion_samples(&geo, &captures, stride, workers)?, &weights, workers)?
                }
            };
            let mut text = format!(
                "loss\t{loss:.17e}\nmean_acc\t{:.17e}\noverall_acc\t{:.17e}\n",
                report.mean_accuracy, report.overall_accuracy
            );
            for (c, r) in report.recall.iter().enumerate() {
                match r {
                    Some(r) => text.push_str(&format!("recall_{c}\t{r:.17e}\n")),
                    None => text.push_str(&format!("recall_{c}\tabsent\n")),
                }
            }
            fs::write(run.path("eval.tsv"), &text)?;
            print!("{text}");
        }
        Command::GradCheck => {
            let errors = layer_gradient_errors(&cfg.branch, &cfg.fusion, cfg.seed)?;
            let mut text = String::from("layer\tmax_rel_error\n");
            for (layer, e) in &errors {
                text.push_str(&format!("{layer}\t{e:.3e}\n"));
            }
            fs::write(run.path("gradcheck.tsv"), &text)?;
            print!("{text}");
            let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
            if worst > GRAD_TOLERANCE {
                eprintln!("error (numeric): max relative error {worst:.3e} exceeds {GRAD_TOLERANCE:e}");
                code = EXIT_NUMERIC;
            }
        }
        Command::BenchPool { input, r } => {
            let cloud = read_ply(&input)?;
            let mut text = String::from("method\tgroups\tmean_distance\n");
            for (label, kind) in [("vp", PoolingKind::Voxel), ("nvp", PoolingKind::NearestVoxel)] {
                let start = Instant::now();
                let grouping = kind.group(&cloud.positions, r)?;
                let elapsed = start.elapsed();
                let dist = grouping.mean_member_distance(&cloud.positions);
                text.push_str(&format!("{label}\t{}\t{dist:.17e}\n", grouping.len()));
                println!(
                    "{label}: {} groups, mean distance {dist:.6}, {:.3} ms",
                    grouping.len(),
                    elapsed.as_secs_f64() * 1e3
                );
            }
            fs::write(run.path("pooling.tsv"), text)?;
        }
    }

    fs::write(run.path(CONFIG_FILE), run.manifest.config.to_toml())?;
    run.finish()?;
    Ok(code)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SynthGen { .. } => "synth-gen",
        Command::Preprocess { .. } => "preprocess",
        Command::DumpGraph { .. } => "dump-graph",
        Command::Train3d { .. } => "train-3d",
        Command::TrainFusion { .. } => "train-fusion",
        Command::Eval { .. } => "eval",
        Command::GradCheck => "grad-check",
        Command::BenchPool { .. } => "bench-pool",
    }
}

fn print_epoch(r: &crate::model::EpochRecord) {
    println!(
        "epoch {} {} loss {:.5} mean_acc {:.4}",
        r.epoch, r.split, r.loss, r.mean_accuracy
    );
}

/// Flags win over the configured data paths.
fn data_dirs(cfg: &ExperimentConfig, train: Option<PathBuf>, test: Option<PathBuf>) -> Result<(PathBuf, Option<PathBuf>)> {
    let train = train
        .or_else(|| cfg.data.train.clone())
        .ok_or_else(|| Error::invalid("no training data: pass --train or set data.train"))?;
    Ok((train, test.or_else(|| cfg.data.test.clone())))
}

fn class_count(labels: impl Iterator<Item = usize>) -> Result<usize> {
    labels
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::InvalidDataset("no labelled samples".into()))
}

fn write_training(run: &Run, outcome: &TrainOutcome, store: &crate::nn::ParamStore) -> Result<()> {
    fs::write(run.path(METRICS_FILE), outcome.metrics_text())?;
    outcome.best_checkpoint.save(run.path(BEST_CHECKPOINT))?;
    Checkpoint::from_store(store).save(run.path(LAST_CHECKPOINT))?;
    println!(
        "best epoch {} mean_acc {:.4}",
        outcome.best_epoch, outcome.best_metrics.mean_accuracy
    );
    Ok(())
}

fn geometric_model(branch: &BranchConfig, cfg: &ExperimentConfig, classes: usize) -> Result<GeometricModel> {
    GeometricModel::new(branch, classes, cfg.optimizer.dropout, cfg.augmentation.clone(), cfg.seed)
}

/// Best checkpoint of a `train-3d` output directory.
fn load_geometric(dir: &Path) -> Result<GeometricModel> {
    let manifest = Manifest::load(dir)?;
    match &manifest.model {
        Some(info) if info.kind == ModelKind::Geometric => {
            let mut m = geometric_model(&manifest.config.branch, &manifest.config, info.classes)?;
            Checkpoint::load(dir.join(BEST_CHECKPOINT))?.apply_to(&mut m.store)?;
            Ok(m)
        }
        _ => Err(Error::InvalidDataset(format!("{} is not a train-3d run", dir.display()))),
    }
}
