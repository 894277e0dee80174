//! Command-line surface: argument parsing, run configuration and the
//! subcommands that chain the library stages through files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::community::{communities, modularity};
use crate::derive_seed;
use crate::error::{GraceError, Result};
use crate::gnn::{self, checkpoint, LabeledGraph, LayerKind, Targets, Task, TrainConfig};
use crate::graph::{assortativity, avg_clustering, avg_degree, induced_subgraph, Graph};
use crate::io;
use crate::matrix::{BlockLayout, FeatureMatrix};
use crate::metrics::{binary_report, classification_report, multilabel_report, MetricsReport};
use crate::psn::{build_psn, DEFAULT_PSN_THRESHOLD};
use crate::sampler::{ga_sample, FitnessBreakdown, GaConfig, TracePoint, DEFAULT_META_FRACTION};
use crate::synth::{generate, generate_graph, generate_text, stratified_split, SynthConfig};
use crate::text::{
    assemble_features, count_trigrams, emotive_vector, lexical_vector, select_trigrams, EmotiveLexicon,
    NodeBlocks, SelectedTrigrams, DEFAULT_P_THRESHOLD,
};
use crate::treenorm::{tree_norm, TreeNormConfig};

pub const FEATURES_FILE: &str = "features.grmat";
pub const SIDECAR_FILE: &str = "features.json";
pub const EDGES_FILE: &str = "edges.tsv";
pub const STATS_FILE: &str = "graph_stats.json";
pub const META_FILE: &str = "meta_graph.json";
pub const MODEL_FILE: &str = "model.grm";
pub const TRACE_FILE: &str = "train_trace.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "grace", version, about = "Similarity-graph node classification with meta-graph regularized training")]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble node features from embeddings, notes and a lexicon.
    Featurize(CommonArgs),
    /// Build the similarity graph of a feature matrix.
    BuildGraph(CommonArgs),
    /// Structural statistics of an edge list.
    GraphStats(CommonArgs),
    /// Sample the meta-graph with the genetic algorithm.
    SampleMeta(CommonArgs),
    /// Train the classifier.
    Train(CommonArgs),
    /// Evaluate a trained model on the test split.
    Eval(CommonArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// featurize, build-graph, sample-meta, train and eval in one run.
    Pipeline(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    T1,
    T2,
    T3,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::T1 => Task::T1,
            TaskArg::T2 => Task::T2,
            TaskArg::T3 => Task::T3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayerArg {
    MeanAgg,
    NormAdj,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Base embedding matrix (GRMAT1 or CSV).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Reason embedding matrix; omitted means no reason block.
    #[arg(long)]
    pub reason: Option<PathBuf>,
    /// Token corpus, `node_id<TAB>tokens`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Emotive lexicon JSON, category -> word list.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// JSON list fixing label order for multilabel tasks.
    #[arg(long)]
    pub label_names: Option<PathBuf>,
    /// `node_id,train|test` assignment.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub meta_fraction: Option<f64>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub meta_coefficient: Option<f64>,
    #[arg(long, value_enum)]
    pub layer: Option<LayerArg>,
    /// Per-sample reweighting instead of the combined-gradient update.
    #[arg(long)]
    pub reweight: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub minority: f64,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = crate::synth::DEFAULT_TARGET_DEGREE)]
    pub degree: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Also write a token corpus, lexicon and reason matrix.
    #[arg(long)]
    pub with_text: bool,
}

/// Everything a run needs; loaded from `--config` and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub embeddings: Option<PathBuf>,
    pub reason: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub label_names: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub psn_threshold: f64,
    pub p_threshold: f64,
    pub meta_fraction: f64,
    pub ga: GaConfig,
    /// Task defaults when absent.
    pub train: Option<TrainConfig>,
    pub treenorm: TreeNormConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::T1,
            embeddings: None,
            reason: None,
            corpus: None,
            lexicon: None,
            labels: None,
            label_names: None,
            split: None,
            features: None,
            edges: None,
            meta: None,
            model: None,
            psn_threshold: DEFAULT_PSN_THRESHOLD,
            p_threshold: DEFAULT_P_THRESHOLD,
            meta_fraction: DEFAULT_META_FRACTION,
            ga: GaConfig::default(),
            train: None,
            treenorm: TreeNormConfig::default(),
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        serde_json::from_str(&text)
            .map_err(|e| GraceError::config(format!("{}:{}: {e}", path.display(), e.line())))
    }

    /// Applies the global flags and the subcommand flags on top of `self`.
    pub fn merge(mut self, cli: &Cli, args: &CommonArgs) -> Self {
        if let Some(s) = cli.seed {
            self.seed = s;
        }
        if let Some(o) = &cli.out {
            self.out = o.clone();
        }
        if let Some(t) = args.task {
            self.task = t.into();
        }
        let paths = [
            (&mut self.embeddings, &args.embeddings),
            (&mut self.reason, &args.reason),
            (&mut self.corpus, &args.corpus),
            (&mut self.lexicon, &args.lexicon),
            (&mut self.labels, &args.labels),
            (&mut self.label_names, &args.label_names),
            (&mut self.split, &args.split),
            (&mut self.features, &args.features),
            (&mut self.edges, &args.edges),
            (&mut self.meta, &args.meta),
            (&mut self.model, &args.model),
        ];
        for (dst, src) in paths {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        if let Some(t) = args.threshold {
            self.psn_threshold = t;
        }
        if let Some(f) = args.meta_fraction {
            self.meta_fraction = f;
        }
        if let Some(g) = args.generations {
            self.ga.generations = g;
        }
        if let Some(p) = args.population {
            self.ga.population_size = p;
        }
        let mut train = self.train_config();
        if let Some(e) = args.epochs {
            train.epochs = e;
        }
        if let Some(h) = args.hidden {
            train.hidden_dim = h;
        }
        if let Some(l) = args.learning_rate {
            train.learning_rate = l;
        }
        if let Some(d) = args.dropout {
            train.dropout_rate = d;
        }
        if let Some(m) = args.meta_coefficient {
            train.meta_coefficient = m;
        }
        if let Some(l) = args.layer {
            train.layer_kind = match l {
                LayerArg::MeanAgg => LayerKind::MeanAgg,
                LayerArg::NormAdj => LayerKind::NormAdj,
            };
        }
        if args.reweight {
            train.reweight = true;
        }
        self.train = Some(train);
        self
    }

    /// Training settings with the task mode forced to match the task.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.train.clone().unwrap_or_else(|| TrainConfig::for_task(self.task));
        cfg.task = self.task.mode();
        cfg
    }

    fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| GraceError::config(format!("missing --{flag} (or '{}' in the config file)", flag.replace('-', "_"))))
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Node labels as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeLabels {
    Classes(Vec<usize>),
    Multi { names: Vec<String>, rows: Vec<Vec<bool>> },
}

impl NodeLabels {
    pub fn load(run: &RunConfig, n: usize) -> Result<Self> {
        let path = run.require(&run.labels, "labels")?;
        match run.task {
            Task::T1 | Task::T2 => Ok(NodeLabels::Classes(io::read_class_labels(path, n)?)),
            Task::T3 => {
                let names = io::read_label_names(run.require(&run.label_names, "label-names")?)?;
                let rows = io::read_multilabels(path, &names, n)?;
                Ok(NodeLabels::Multi { names, rows })
            }
        }
    }

    /// Class per node for stratification and trigram selection; multilabel
    /// nodes count as class 1 when any label is set.
    pub fn coarse(&self) -> Vec<usize> {
        match self {
            NodeLabels::Classes(c) => c.clone(),
            NodeLabels::Multi { rows, .. } => rows.iter().map(|r| usize::from(r.iter().any(|&b| b))).collect(),
        }
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            NodeLabels::Classes(c) => c.iter().max().map_or(2, |&m| (m + 1).max(2)),
            NodeLabels::Multi { names, .. } => names.len(),
        }
    }

    pub fn targets(&self, idx: &[usize]) -> Targets {
        match self {
            NodeLabels::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            NodeLabels::Multi { rows, names } => Targets::Multilabel(Array2::from_shape_fn((idx.len(), names.len()), |(i, l)| {
                f64::from(u8::from(rows[idx[i]][l]))
            })),
        }
    }
}

/// Train and test node ids (ascending); everything is train without a split.
pub fn load_split(run: &RunConfig, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let is_test = match &run.split {
        Some(p) => io::read_split(p, n)?,
        None => vec![false; n],
    };
    let train = (0..n).filter(|&i| !is_test[i]).collect();
    let test = (0..n).filter(|&i| is_test[i]).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub layout: BlockLayout,
    pub total: usize,
    pub p_threshold: f64,
    pub num_train_notes: usize,
    pub selected_trigrams: SelectedTrigrams,
}

impl FeatureSidecar {
    pub fn new(layout: BlockLayout, p_threshold: f64, num_train_notes: usize, selected: SelectedTrigrams) -> Self {
        FeatureSidecar {
            layout,
            total: layout.total(),
            p_threshold,
            num_train_notes,
            selected_trigrams: selected,
        }
    }
}

/// Writes the assembled feature matrix and its sidecar.
pub fn cmd_featurize(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let emb_path = run.require(&run.embeddings, "embeddings")?;
    let base = io::read_matrix(emb_path)?;
    let n = base.nrows();
    let reason = match &run.reason {
        Some(p) => {
            let r = io::read_matrix(p)?;
            if r.nrows() != n {
                return Err(GraceError::input_at(
                    p.display().to_string(),
                    format!("{} rows, embeddings have {n}", r.nrows()),
                ));
            }
            Some(r)
        }
        None => None,
    };
    let notes = io::read_corpus(run.require(&run.corpus, "corpus")?, n)?;
    let lexicon = EmotiveLexicon::from_json(&io::read_text(run.require(&run.lexicon, "lexicon")?)?)?;
    let labels = NodeLabels::load(run, n)?.coarse();
    let (train, _) = load_split(run, n)?;

    // vocabulary comes from training notes only
    let train_notes: Vec<_> = train.iter().map(|&i| notes[i].clone()).collect();
    let class_a: Vec<bool> = train.iter().map(|&i| labels[i] == 1).collect();
    let stats = count_trigrams(&train_notes, &class_a)?;
    let selected = select_trigrams(&stats, run.p_threshold)?;

    let blocks = (0..n)
        .map(|i| {
            Ok(NodeBlocks {
                base: base.row(i).to_vec(),
                lex: lexical_vector(&notes[i], &selected),
                emo: emotive_vector(&notes[i], &lexicon)?,
                reason: reason.as_ref().map_or_else(Vec::new, |r| r.row(i).to_vec()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let features = assemble_features(&blocks)?;
    let sidecar = FeatureSidecar::new(features.layout(), run.p_threshold, train.len(), selected);
    log::info!("featurized {n} nodes into {} columns", sidecar.total);

    let fpath = run.out_path(FEATURES_FILE);
    let spath = run.out_path(SIDECAR_FILE);
    io::write_matrix(&fpath, features.data())?;
    io::write_json(&spath, &sidecar)?;
    Ok(vec![fpath, spath])
}

fn load_features(run: &RunConfig) -> Result<FeatureMatrix> {
    FeatureMatrix::new(io::read_matrix(run.require(&run.features, "features")?)?)
}

/// Similarity graph; with a split, train and test nodes get disjoint graphs.
pub fn cmd_build_graph(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let x = load_features(run)?;
    let mut g = build_psn(&x, run.psn_threshold)?;
    if run.split.is_some() {
        let is_test = io::read_split(run.split.as_deref().expect("checked"), x.num_nodes())?;
        let kept: Vec<(usize, usize)> = g.edges().filter(|&(u, v)| is_test[u] == is_test[v]).collect();
        g = Graph::from_edges(x.num_nodes(), &kept)?;
    }
    let path = run.out_path(EDGES_FILE);
    io::write_edges(&path, &g)?;
    Ok(vec![path])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub avg_degree: Option<f64>,
    pub isolated_nodes: usize,
    pub avg_clustering: Option<f64>,
    pub assortativity: Option<f64>,
    pub communities: usize,
    pub modularity: f64,
    pub tree_norm: f64,
}

pub fn graph_stats(g: &Graph, tn: &TreeNormConfig, seed: u64) -> Result<GraphStats> {
    tn.validate()?;
    let p = communities(g, seed);
    Ok(GraphStats {
        nodes: g.num_nodes(),
        edges: g.num_edges(),
        avg_degree: avg_degree(g).ok(),
        isolated_nodes: g.isolated_count(),
        avg_clustering: avg_clustering(g).ok(),
        assortativity: assortativity(g),
        communities: p.num_communities,
        modularity: modularity(g, &p),
        tree_norm: tree_norm(g, tn),
    })
}

pub fn cmd_graph_stats(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let g = io::read_edges(run.require(&run.edges, "edges")?)?;
    let stats = graph_stats(&g, &run.treenorm, derive_seed(run.seed, "graph-stats"))?;
    let path = run.out_path(STATS_FILE);
    io::write_json(&path, &stats)?;
    Ok(vec![path])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaGraphFile {
    /// Node ids of the full graph.
    pub nodes: Vec<usize>,
    pub num_edges: usize,
    pub fitness: FitnessBreakdown,
    pub trace: Vec<TracePoint>,
    pub fraction: f64,
    pub ga: GaConfig,
    pub treenorm: TreeNormConfig,
}

/// Loads the graph and features and checks they agree.
fn load_graph_and_features(run: &RunConfig) -> Result<(Graph, FeatureMatrix)> {
    let g = io::read_edges(run.require(&run.edges, "edges")?)?;
    let x = load_features(run)?;
    if g.num_nodes() != x.num_nodes() {
        return Err(GraceError::input(format!(
            "edge list has {} nodes but the feature matrix has {} rows",
            g.num_nodes(),
            x.num_nodes()
        )));
    }
    Ok((g, x))
}

/// GA meta-graph over the training nodes.
pub fn cmd_sample_meta(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let (g, x) = load_graph_and_features(run)?;
    let n = g.num_nodes();
    let labels = NodeLabels::load(run, n)?.coarse();
    let (train, _) = load_split(run, n)?;
    let sub = induced_subgraph(&g, &train)?;
    let xs = x.select_rows(&sub.nodes)?;
    let ys: Vec<usize> = sub.nodes.iter().map(|&v| labels[v]).collect();
    let ga = GaConfig {
        seed: derive_seed(run.seed, "sample-meta"),
        ..run.ga.clone()
    };
    let meta = ga_sample(&sub.graph, &xs, &ys, &ga, &run.treenorm, run.meta_fraction)?;
    let file = MetaGraphFile {
        nodes: meta.nodes.iter().map(|&v| sub.nodes[v]).collect(),
        num_edges: meta.graph.num_edges(),
        fitness: meta.fitness,
        trace: meta.trace,
        fraction: run.meta_fraction,
        ga,
        treenorm: run.treenorm,
    };
    let path = run.out_path(META_FILE);
    io::write_json(&path, &file)?;
    Ok(vec![path])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub initial_meta_loss: f64,
    pub epochs: Vec<gnn::train::EpochRecord>,
}

pub fn cmd_train(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let (g, x) = load_graph_and_features(run)?;
    let n = g.num_nodes();
    let labels = NodeLabels::load(run, n)?;
    let (train_nodes, _) = load_split(run, n)?;
    let meta_file: MetaGraphFile = io::read_json(run.require(&run.meta, "meta")?)?;

    let sub = induced_subgraph(&g, &train_nodes)?;
    let local_meta = meta_file
        .nodes
        .iter()
        .map(|v| {
            sub.old_to_new
                .get(v)
                .copied()
                .ok_or_else(|| GraceError::input(format!("meta node {v} is not a training node")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = run.train_config();
    cfg.seed = derive_seed(run.seed, "train");
    cfg.validate()?;
    let xs = x.data().select(Axis(0), &sub.nodes);
    let targets = labels.targets(&sub.nodes);
    let train_set = LabeledGraph::new(&sub.graph, &xs, targets.clone(), cfg.layer_kind)?;
    let meta_set = LabeledGraph::induced(&sub.graph, &xs, &targets, &local_meta, cfg.layer_kind)?;
    let outcome = gnn::train(&train_set, &meta_set, labels.num_outputs(), &cfg)?;
    log::info!(
        "trained {} epochs, best meta loss at epoch {}",
        cfg.epochs,
        outcome.best_epoch
    );

    let model_path = run.out_path(MODEL_FILE);
    let trace_path = run.out_path(TRACE_FILE);
    io::write_atomic(&model_path, &checkpoint::to_bytes(&outcome.params))?;
    io::write_json(
        &trace_path,
        &TrainTrace {
            config: cfg,
            best_epoch: outcome.best_epoch,
            initial_meta_loss: outcome.initial_meta_loss,
            epochs: outcome.trace,
        },
    )?;
    Ok(vec![model_path, trace_path])
}

/// Metrics of `params` on the graph induced by `nodes`.
pub fn evaluate(
    params: &gnn::ModelParams,
    g: &Graph,
    x: &FeatureMatrix,
    labels: &NodeLabels,
    nodes: &[usize],
) -> Result<MetricsReport> {
    let sub = induced_subgraph(g, nodes)?;
    let xs = x.data().select(Axis(0), &sub.nodes);
    let pg = gnn::PreparedGraph::new(&sub.graph, &xs, params.kind)?;
    let pred = gnn::predict(params, &pg)?;
    match labels {
        NodeLabels::Classes(c) => {
            let truth: Vec<usize> = sub.nodes.iter().map(|&v| c[v]).collect();
            let classes = pred.classes();
            if params.dims.num_outputs == 2 {
                binary_report(&pred.positive_scores(), &classes, &truth)
            } else {
                classification_report(&classes, &truth, params.dims.num_outputs)
            }
        }
        NodeLabels::Multi { names, rows } => {
            let truth: Vec<Vec<bool>> = sub.nodes.iter().map(|&v| rows[v].clone()).collect();
            let scores: Vec<Vec<f64>> = pred.scores.rows().into_iter().map(|r| r.to_vec()).collect();
            multilabel_report(&scores, &truth, names, 0.5)
        }
    }
}

pub fn cmd_eval(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let (g, x) = load_graph_and_features(run)?;
    let n = g.num_nodes();
    let labels = NodeLabels::load(run, n)?;
    let (train, test) = load_split(run, n)?;
    let nodes = if run.split.is_some() { test } else { train };
    if nodes.is_empty() {
        return Err(GraceError::input("no nodes to evaluate"));
    }
    let params = checkpoint::from_bytes(&io::read_bytes(run.require(&run.model, "model")?)?)?;
    if params.task != run.task.mode() {
        return Err(GraceError::config("model was trained for a different task mode"));
    }
    let report = evaluate(&params, &g, &x, &labels, &nodes)?;
    let path = run.out_path(METRICS_FILE);
    io::write_json(&path, &report)?;
    Ok(vec![path])
}

#[derive(Debug, Clone, Serialize)]
struct SynthRecord<'a> {
    synth: &'a SynthConfig,
    threshold: f64,
    noise_edges: usize,
    test_fraction: f64,
}

pub fn cmd_synth(run: &RunConfig, args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let cfg = SynthConfig {
        num_nodes: args.nodes,
        dim: args.dim,
        minority_fraction: args.minority,
        class_separation: args.separation,
        noise_edges_fraction: args.noise,
        target_avg_degree: args.degree,
        seed: derive_seed(run.seed, "synth"),
    };
    let sg = generate_graph(&cfg)?;
    let is_test = stratified_split(&sg.labels, args.test_fraction, run.seed)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = run.out_path(name);
        io::write_atomic(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    put(FEATURES_FILE, &io::matrix_to_bytes(sg.features.data()))?;
    put(EDGES_FILE, io::edges_to_string(&sg.graph).as_bytes())?;
    put("labels.csv", io::class_labels_to_string(&sg.labels).as_bytes())?;
    put("split.csv", io::split_to_string(&is_test).as_bytes())?;
    if args.with_text {
        let text = generate_text(&sg.labels, 0.6, derive_seed(run.seed, "synth-text"))?;
        put("corpus.tsv", io::corpus_to_string(&text.notes).as_bytes())?;
        let lex: std::collections::BTreeMap<&str, Vec<String>> = text
            .lexicon
            .category_names()
            .map(|c| (c, text.lexicon.words(c).map(str::to_string).collect()))
            .collect();
        put("lexicon.json", (serde_json::to_string_pretty(&lex).expect("serializable") + "\n").as_bytes())?;
        let reason_cfg = SynthConfig {
            dim: 8,
            seed: derive_seed(run.seed, "synth-reason"),
            ..cfg.clone()
        };
        // same label sequence, independent noise
        let (reason, reason_labels) = generate(&reason_cfg)?;
        let aligned = align_rows(reason.data(), &reason_labels, &sg.labels);
        put("reason.grmat", &io::matrix_to_bytes(&aligned))?;
    }
    let record = SynthRecord {
        synth: &cfg,
        threshold: sg.threshold,
        noise_edges: sg.noise_edges,
        test_fraction: args.test_fraction,
    };
    put("synth.json", (serde_json::to_string_pretty(&record).expect("serializable") + "\n").as_bytes())?;
    Ok(written)
}

/// Reorders rows of `x` (labelled `from`) so that row `i` has label `to[i]`.
/// Both label vectors must have the same class counts.
fn align_rows(x: &Array2<f64>, from: &[usize], to: &[usize]) -> Array2<f64> {
    let mut pools: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &l) in from.iter().enumerate().rev() {
        pools.entry(l).or_default().push(i);
    }
    let order: Vec<usize> = to
        .iter()
        .map(|l| pools.get_mut(l).and_then(Vec::pop).expect("matching class counts"))
        .collect();
    x.select(Axis(0), &order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub task: Task,
    pub inputs: Vec<ManifestEntry>,
    pub artifacts: Vec<ManifestEntry>,
}

fn manifest_entry(path: &Path, name: String) -> Result<ManifestEntry> {
    let bytes = io::read_bytes(path)?;
    Ok(ManifestEntry {
        file: name,
        sha256: io::sha256_hex(&bytes),
        bytes: bytes.len(),
    })
}

/// Runs every stage into `run.out` and writes a manifest of file hashes.
pub fn cmd_pipeline(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut stage = run.clone();
    let mut artifacts = cmd_featurize(&stage)?;
    stage.features = Some(run.out_path(FEATURES_FILE));
    artifacts.extend(cmd_build_graph(&stage)?);
    stage.edges = Some(run.out_path(EDGES_FILE));
    artifacts.extend(cmd_graph_stats(&stage)?);
    artifacts.extend(cmd_sample_meta(&stage)?);
    stage.meta = Some(run.out_path(META_FILE));
    artifacts.extend(cmd_train(&stage)?);
    stage.model = Some(run.out_path(MODEL_FILE));
    artifacts.extend(cmd_eval(&stage)?);

    let inputs = [
        &run.embeddings,
        &run.reason,
        &run.corpus,
        &run.lexicon,
        &run.labels,
        &run.label_names,
        &run.split,
    ]
    .into_iter()
    .flatten()
    .map(|p| manifest_entry(p, p.display().to_string()))
    .collect::<Result<Vec<_>>>()?;
    let artifacts_entries = artifacts
        .iter()
        .map(|p| {
            let name = p.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned());
            manifest_entry(p, name)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        seed: run.seed,
        task: run.task,
        inputs,
        artifacts: artifacts_entries,
    };
    let path = run.out_path(MANIFEST_FILE);
    io::write_json(&path, &manifest)?;
    artifacts.push(path);
    Ok(artifacts)
}

/// Resolves the configuration and dispatches one command. Returns the files
/// written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let empty = CommonArgs::default();
    let args = match &cli.command {
        Command::Featurize(a)
        | Command::BuildGraph(a)
        | Command::GraphStats(a)
        | Command::SampleMeta(a)
        | Command::Train(a)
        | Command::Eval(a)
        | Command::Pipeline(a) => a,
        Command::Synth(_) => &empty,
    };
    let run = base.merge(cli, args);
    match &cli.command {
        Command::Featurize(_) => cmd_featurize(&run),
        Command::BuildGraph(_) => cmd_build_graph(&run),
        Command::GraphStats(_) => cmd_graph_stats(&run),
        Command::SampleMeta(_) => cmd_sample_meta(&run),
        Command::Train(_) => cmd_train(&run),
        Command::Eval(_) => cmd_eval(&run),
        Command::Synth(a) => cmd_synth(&run, a),
        Command::Pipeline(_) => cmd_pipeline(&run),
    }
}
