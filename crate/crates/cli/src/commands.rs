use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dssl_core::checkpoint::{Checkpoint, CheckpointError, ModelKind};
use dssl_core::eval::{evaluate, linear_probe, split_nodes, write_matrix_csv, EvalError, NmiNormalization, SplitSpec};
use dssl_core::gae::train_gae_with;
use dssl_core::graph::{
    class_average_homophily, cross_class_neighborhood_similarity, edge_homophily, generate_synthetic, load_graph,
    write_graph, GraphFiles, SyntheticSpec,
};
use dssl_core::model::GraphContext;
use dssl_core::train::{full_node_posteriors, train_with, EpochLog, TrainError};
use dssl_core::{Graph, GraphError, Tensor, TensorError};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::manifest::{ManifestBuilder, RunManifest};

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or input contents.
    #[error("{0}")]
    Usage(String),
    /// Training produced a non-finite loss.
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Where a graph comes from on the command line.
#[derive(Debug, Clone, Args, Default)]
pub struct GraphArgs {
    /// Directory holding edges.txt, features.csv and (optionally) labels.txt.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Edge list, overrides the one in --graph.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Feature CSV, overrides the one in --graph.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Label file, overrides the one in --graph.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Treat the edge list as directed.
    #[arg(long)]
    pub directed: bool,
}

impl GraphArgs {
    pub fn is_given(&self) -> bool {
        self.graph.is_some() || self.edges.is_some() || self.features.is_some()
    }

    pub fn load(&self, manifest: &mut ManifestBuilder) -> Result<Graph> {
        let dir_files = self.graph.as_deref().map(GraphFiles::in_dir);
        let edges = self
            .edges
            .clone()
            .or_else(|| dir_files.as_ref().map(|f| f.edges.clone()))
            .ok_or_else(|| CliError::Usage("no edge list: pass --graph or --edges".into()))?;
        let features = self
            .features
            .clone()
            .or_else(|| dir_files.as_ref().map(|f| f.features.clone()))
            .ok_or_else(|| CliError::Usage("no features: pass --graph or --features".into()))?;
        let labels = self
            .labels
            .clone()
            .or_else(|| dir_files.as_ref().map(|f| f.labels.clone()).filter(|p| p.exists()));
        for p in [Some(&edges), Some(&features), labels.as_ref()].into_iter().flatten() {
            manifest.input(p);
        }
        Ok(load_graph(&edges, &features, labels.as_deref(), self.directed)?)
    }
}

/// Parameters of a generated graph.
#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 1000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Target fraction of intra-class edges.
    #[arg(long, default_value_t = 0.5)]
    pub homophily: f64,
    /// Mean node degree.
    #[arg(long, default_value_t = 8.0)]
    pub degree: f64,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    /// Norm of the class means in feature space.
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SyntheticArgs {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_nodes: self.nodes,
            class_count: self.classes,
            feature_dim: self.feature_dim,
            homophily: self.homophily,
            mean_degree: self.degree,
            feature_signal: self.signal,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    /// Seed of the node split and of k-means.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Draw the split from all labeled nodes instead of per class.
    #[arg(long)]
    pub no_stratify: bool,
}

impl SplitArgs {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.train_frac,
            val: self.val_frac,
            test: self.test_frac,
            seed: self.split_seed,
            stratified: !self.no_stratify,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dssl,
    Gae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NmiArg {
    Arithmetic,
    Geometric,
}

impl From<NmiArg> for NmiNormalization {
    fn from(a: NmiArg) -> Self {
        match a {
            NmiArg::Arithmetic => NmiNormalization::Arithmetic,
            NmiArg::Geometric => NmiNormalization::Geometric,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Writes the manifest to `path`, or to stderr when there is none.
pub fn emit_manifest(manifest: &RunManifest, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_json(p, manifest),
        None => {
            eprintln!("{}", serde_json::to_string(manifest).expect("serializable"));
            Ok(())
        }
    }
}

/// Runs `body`, then records the outcome in a manifest whether or not it
/// succeeded.
pub fn with_manifest(
    command: &str,
    path: Option<&Path>,
    body: impl FnOnce(&mut ManifestBuilder) -> Result<()>,
) -> Result<()> {
    let mut builder = ManifestBuilder::new(command);
    let result = body(&mut builder);
    let manifest = builder.finish(result.as_ref().map(|_| ()).map_err(|e| e.to_string()));
    let written = emit_manifest(&manifest, path);
    result.and(written)
}

// generate

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    create_dir(&args.out)?;
    with_manifest("generate", Some(&args.out.join("manifest.json")), |m| {
        let spec = args.synthetic.spec();
        m.config(&spec);
        m.manifest.seed = Some(spec.seed);
        let g = generate_synthetic(&spec)?;
        let files = write_graph(&g, &args.out)?;
        for p in [&files.edges, &files.features, &files.labels] {
            m.output(p);
        }
        m.manifest.details = serde_json::json!({
            "requested_homophily": spec.homophily,
            "measured_edge_homophily": edge_homophily(&g).ok(),
            "measured_class_average_homophily": class_average_homophily(&g).ok(),
            "n_nodes": g.num_nodes(),
            "n_edges": g.num_edges(),
        });
        Ok(())
    })
}

// metrics

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Manifest destination; stderr when omitted.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub edge_homophily: f64,
    pub class_average_homophily: f64,
    /// Row-major class-by-class similarity; `null` where a class has no
    /// labeled neighbors.
    pub cross_class_similarity: Vec<Vec<Option<f64>>>,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_classes: usize,
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    with_manifest("metrics", args.manifest.as_deref(), |m| {
        let g = args.graph.load(m)?;
        let report = MetricsReport {
            edge_homophily: edge_homophily(&g)?,
            class_average_homophily: class_average_homophily(&g)?,
            cross_class_similarity: cross_class_neighborhood_similarity(&g)?.0,
            n_nodes: g.num_nodes(),
            n_edges: g.num_edges(),
            n_classes: g.class_count(),
        };
        println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        Ok(())
    })
}

// train

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// `key = value` config file; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long, value_enum, default_value_t = Method::Dssl)]
    pub method: Method,
    /// Output directory for model.ckpt, log.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn load_config(path: Option<&Path>, m: &mut ManifestBuilder) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            m.input(p);
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Validation accuracy of `reps` on the configured split, if the graph is
/// labeled.
fn val_probe(reps: &Tensor, graph: &Graph, seed: u64) -> Option<f64> {
    let labels = graph.labels()?;
    let splits = split_nodes(labels, &SplitSpec { seed, ..Default::default() }).ok()?;
    linear_probe(reps, labels, &splits).ok().map(|p| p.val_accuracy)
}

pub struct Trained {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Trains either method. Log rows are passed to `on_epoch` as they arrive.
pub fn run_training(
    graph: &Graph,
    cfg: &RunConfig,
    method: Method,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained> {
    match method {
        Method::Dssl => {
            let ctx = GraphContext::new(graph)?;
            let seed = cfg.train.seed;
            let out = train_with(graph, &cfg.train, |_, params| {
                params.online.encode(&ctx).ok().and_then(|r| val_probe(&r, graph, seed))
            })?;
            out.log.iter().for_each(&mut on_epoch);
            Ok(Trained {
                checkpoint: Checkpoint::from_dssl(&out.params, cfg),
                log: out.log,
            })
        }
        Method::Gae => {
            let out = train_gae_with(graph, &cfg.gae(), &mut on_epoch)?;
            Ok(Trained {
                checkpoint: Checkpoint::from_gae(&out.encoder, cfg),
                log: out.log,
            })
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    create_dir(&args.out)?;
    with_manifest("train", Some(&args.out.join("manifest.json")), |m| {
        let cfg = load_config(args.config.as_deref(), m)?;
        m.config(&cfg);
        m.manifest.seed = Some(cfg.train.seed);
        let graph = args.graph.load(m)?;
        let log_path = args.out.join("log.jsonl");
        let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
        m.output(&log_path);
        let mut log = BufWriter::new(file);
        let mut write_err = None;
        let trained = run_training(&graph, &cfg, args.method, |row| {
            let line = serde_json::to_string(row).expect("serializable");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                write_err.get_or_insert(e);
            }
        });
        if let Some(e) = write_err {
            return Err(io_err(&log_path, e));
        }
        let trained = trained?;
        let ckpt_path = args.out.join("model.ckpt");
        trained.checkpoint.save(&ckpt_path)?;
        m.output(&ckpt_path);
        m.manifest.details = serde_json::json!({
            "method": args.method,
            "epochs": trained.log.len(),
            "loss_final": trained.log.last().map(|r| r.loss_total),
            "config_hash": trained.checkpoint.header.config_hash,
        });
        Ok(())
    })
}

// eval

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Trained model to encode the graph with.
    #[arg(long, conflicts_with = "reps", required_unless_present = "reps")]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed representation CSV (node_id, then one column per dimension).
    #[arg(long)]
    pub reps: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = NmiArg::Arithmetic)]
    pub nmi: NmiArg,
    /// Also write the representations as CSV.
    #[arg(long)]
    pub dump_reps: Option<PathBuf>,
    /// Also write node cluster posteriors as CSV (DSSL checkpoints only).
    #[arg(long)]
    pub dump_posteriors: Option<PathBuf>,
    /// Report destination in addition to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest destination; stderr when omitted.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    with_manifest("eval", args.manifest.as_deref(), |m| {
        let split = args.split.spec();
        m.config(&serde_json::json!({ "split": split, "nmi": NmiNormalization::from(args.nmi) }));
        m.manifest.seed = Some(split.seed);
        let graph = args.graph.load(m)?;
        let mut posteriors = None;
        let reps = match (&args.checkpoint, &args.reps) {
            (Some(path), _) => {
                m.input(path);
                let ckpt = Checkpoint::load(path)?;
                let expected = ckpt.header.dims.input;
                if expected != graph.feature_dim() {
                    return Err(CliError::Usage(format!(
                        "checkpoint expects {expected} input features but the graph has {}",
                        graph.feature_dim()
                    )));
                }
                let ctx = GraphContext::new(&graph)?;
                if args.dump_posteriors.is_some() {
                    if ckpt.header.kind != ModelKind::Dssl {
                        return Err(CliError::Usage(format!(
                            "--dump-posteriors needs a dssl checkpoint, got {}",
                            ckpt.header.kind
                        )));
                    }
                    let (_, q) = full_node_posteriors(&ckpt.model_params()?, &graph, &ctx)?;
                    posteriors = Some(q);
                }
                ckpt.encoder()?.encode(&ctx)?
            }
            (None, Some(path)) => {
                if args.dump_posteriors.is_some() {
                    return Err(CliError::Usage("--dump-posteriors needs --checkpoint".into()));
                }
                m.input(path);
                dssl_core::eval::read_representations_csv(path)?
            }
            (None, None) => return Err(CliError::Usage("pass --checkpoint or --reps".into())),
        };
        if reps.rows() != graph.num_nodes() {
            return Err(CliError::Usage(format!(
                "representations have {} rows but the graph has {} nodes",
                reps.rows(),
                graph.num_nodes()
            )));
        }
        if let Some(p) = &args.dump_reps {
            write_matrix_csv(p, &reps, "dim")?;
            m.output(p);
        }
        if let (Some(p), Some(q)) = (&args.dump_posteriors, &posteriors) {
            write_matrix_csv(p, q, "cluster")?;
            m.output(p);
        }
        let report = evaluate(&reps, &graph, &split, args.nmi.into())?;
        if let Some(p) = &args.out {
            write_json(p, &report)?;
            m.output(p);
        }
        m.manifest.details = serde_json::to_value(&report).expect("serializable");
        println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        Ok(())
    })
}

// sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Tau,
    #[value(name = "sigma1_sq")]
    Sigma1Sq,
    #[value(name = "sigma2_sq")]
    Sigma2Sq,
    Gamma,
    K,
    Homophily,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Tau => "tau",
            Axis::Sigma1Sq => "sigma1_sq",
            Axis::Sigma2Sq => "sigma2_sq",
            Axis::Gamma => "gamma",
            Axis::K => "k",
            Axis::Homophily => "homophily",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Base config; the swept key overrides it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Comma-separated seeds; each seeds training and the split. For
    /// generated graphs it also seeds the graph.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "dssl")]
    pub methods: Vec<Method>,
    /// Fixed input graph; without it every trial generates one.
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    /// CSV destination; the manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub nmi: f64,
    pub loss_final: f64,
}

fn apply_axis(cfg: &mut RunConfig, axis: Axis, value: f64) -> Result<()> {
    let h = &mut cfg.train.hyper;
    match axis {
        Axis::Tau => cfg.train.tau = value,
        Axis::Sigma1Sq => h.sigma1_sq = value,
        Axis::Sigma2Sq => h.sigma2_sq = value,
        Axis::Gamma => h.gamma = value,
        Axis::K => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(CliError::Usage(format!("k must be a positive integer, got {value}")));
            }
            h.k = value as usize
        }
        Axis::Homophily => {}
    }
    cfg.validate()?;
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-trial rows followed by one aggregate row per (method, value) whose
/// seed column reads `mean±std` and whose metric cells hold `mean±std`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,seed,accuracy,nmi,loss_final\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{},{}\n",
            r.axis, r.value, r.seed, r.accuracy, r.nmi, r.loss_final
        );
    }
    let mut groups: Vec<(&str, f64)> = Vec::new();
    for r in rows {
        if !groups.iter().any(|g| g.0 == r.axis && g.1 == r.value) {
            groups.push((&r.axis, r.value));
        }
    }
    for (axis, value) in groups {
        let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.axis == axis && r.value == value).collect();
        let cell = |f: fn(&SweepRow) -> f64| {
            let (m, s) = mean_std(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            format!("{m}±{s}")
        };
        out += &format!(
            "{axis},{value},mean±std,{},{},{}\n",
            cell(|r| r.accuracy),
            cell(|r| r.nmi),
            cell(|r| r.loss_final)
        );
    }
    out
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let manifest_path = args.out.with_extension("manifest.json");
    with_manifest("sweep", Some(&manifest_path), |m| {
        let base = load_config(args.config.as_deref(), m)?;
        m.config(&serde_json::json!({
            "base": base,
            "axis": args.axis.name(),
            "values": args.values,
            "seeds": args.seeds,
            "methods": args.methods,
        }));
        if args.seeds.is_empty() || args.values.is_empty() || args.methods.is_empty() {
            return Err(CliError::Usage("sweep needs at least one value, seed and method".into()));
        }
        if args.axis != Axis::Homophily && args.methods.contains(&Method::Gae) {
            return Err(CliError::Usage(format!("axis {} does not apply to gae", args.axis.name())));
        }
        let fixed = if args.graph.is_given() {
            if args.axis == Axis::Homophily {
                return Err(CliError::Usage("the homophily axis needs generated graphs, drop --graph".into()));
            }
            Some(args.graph.load(m)?)
        } else {
            None
        };
        let label_methods = args.methods.len() > 1 || args.methods[0] != Method::Dssl;
        let trials: Vec<(Method, f64, u64)> = args
            .methods
            .iter()
            .flat_map(|&me| args.values.iter().flat_map(move |&v| args.seeds.iter().map(move |&s| (me, v, s))))
            .collect();
        for &(_, v, _) in &trials {
            apply_axis(&mut base.clone(), args.axis, v)?;
        }
        let rows: Vec<Result<SweepRow>> = trials
            .par_iter()
            .map(|&(method, value, seed)| {
                let mut cfg = base.clone();
                apply_axis(&mut cfg, args.axis, value)?;
                cfg.train.seed = seed;
                let generated;
                let graph = match &fixed {
                    Some(g) => g,
                    None => {
                        let mut spec = args.synthetic.spec();
                        spec.seed = seed;
                        if args.axis == Axis::Homophily {
                            spec.homophily = value;
                        }
                        generated = generate_synthetic(&spec)?;
                        &generated
                    }
                };
                let trained = run_training(graph, &cfg, method, |_| {})?;
                let reps = trained.checkpoint.encoder()?.encode(&GraphContext::new(graph)?)?;
                let split = SplitSpec { seed, ..Default::default() };
                let report = evaluate(&reps, graph, &split, NmiNormalization::Arithmetic)?;
                let axis = if label_methods {
                    format!("{}:{}", args.axis.name(), if method == Method::Dssl { "dssl" } else { "gae" })
                } else {
                    args.axis.name().to_string()
                };
                Ok(SweepRow {
                    axis,
                    value,
                    seed,
                    accuracy: report.accuracy,
                    nmi: report.nmi,
                    loss_final: trained.log.last().map_or(f64::NAN, |r| r.loss_total),
                })
            })
            .collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        fs::write(&args.out, sweep_csv(&rows)).map_err(|e| io_err(&args.out, e))?;
        m.output(&args.out);
        Ok(())
    })
}
