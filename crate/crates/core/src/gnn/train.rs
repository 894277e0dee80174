//! Meta-regularized full-batch training.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{self, DropoutMasks, PreparedGraph, Targets};
use super::params::{LayerKind, ModelDims, ModelParams, TaskMode};
use crate::derive_seed;
use crate::error::{GraceError, Result};
use crate::graph::{induced_subgraph, Graph};

/// The three prediction tasks and their tuned defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Binary inpatient/outpatient decision.
    T1,
    /// Binary decision with the second label set.
    T2,
    /// Multilabel high-risk flags.
    T3,
}

impl Task {
    pub fn mode(self) -> TaskMode {
        match self {
            Task::T1 | Task::T2 => TaskMode::BinarySoftmax,
            Task::T3 => TaskMode::MultilabelSigmoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub layer_kind: LayerKind,
    pub learning_rate: f64,
    /// Weight of the meta-graph gradient in the combined update.
    pub meta_coefficient: f64,
    /// Inner-step rate of the sample-reweighting lookahead.
    pub meta_learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub task: TaskMode,
    /// Use per-sample reweighting instead of the combined gradient.
    pub reweight: bool,
    /// Return the parameters with the lowest meta-graph loss rather than the
    /// last ones.
    pub select_by_meta_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_task(Task::T1)
    }
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let (hidden_dim, learning_rate, meta_learning_rate) = match task {
            Task::T1 => (105, 0.00045, 0.00287),
            Task::T2 => (60, 0.00411, 0.00015),
            Task::T3 => (68, 0.00771, 0.00061),
        };
        TrainConfig {
            hidden_dim,
            layer_kind: LayerKind::MeanAgg,
            learning_rate,
            meta_coefficient: 1.0,
            meta_learning_rate,
            epochs: 200,
            dropout_rate: 0.3,
            seed: 0,
            task: task.mode(),
            reweight: false,
            select_by_meta_loss: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.hidden_dim == 0 {
            return Err(GraceError::config("hidden_dim must be positive"));
        }
        if !positive(self.learning_rate) || !positive(self.meta_learning_rate) {
            return Err(GraceError::config(format!(
                "learning rates must be positive (got {} and {})",
                self.learning_rate, self.meta_learning_rate
            )));
        }
        if !(self.meta_coefficient.is_finite() && self.meta_coefficient >= 0.0) {
            return Err(GraceError::config(format!(
                "meta_coefficient {} must be non-negative",
                self.meta_coefficient
            )));
        }
        if !(0.0..=0.5).contains(&self.dropout_rate) {
            return Err(GraceError::config(format!(
                "dropout_rate {} outside [0, 0.5]",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// A prepared graph with supervision for each of its nodes.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: PreparedGraph,
    pub targets: Targets,
}

impl LabeledGraph {
    pub fn new(g: &Graph, x: &Array2<f64>, targets: Targets, kind: LayerKind) -> Result<Self> {
        if targets.len() != g.num_nodes() {
            return Err(GraceError::input(format!(
                "{} labels for a graph with {} nodes",
                targets.len(),
                g.num_nodes()
            )));
        }
        Ok(LabeledGraph {
            graph: PreparedGraph::new(g, x, kind)?,
            targets,
        })
    }

    /// The subgraph induced by `nodes` with its own feature rows and labels.
    pub fn induced(
        g: &Graph,
        x: &Array2<f64>,
        targets: &Targets,
        nodes: &[usize],
        kind: LayerKind,
    ) -> Result<Self> {
        let sub = induced_subgraph(g, nodes)?;
        let rows = x.select(ndarray::Axis(0), &sub.nodes);
        LabeledGraph::new(&sub.graph, &rows, targets.select(&sub.nodes), kind)
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub main_loss: f64,
    /// Meta-graph loss at the lookahead parameters.
    pub meta_loss: f64,
    pub main_grad_norm: f64,
    pub meta_grad_norm: f64,
}

/// Non-negative per-node weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        SampleWeights(vec![1.0 / n as f64; n])
    }

    /// Normalizes `raw`; an all-zero vector falls back to uniform.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GraceError::numeric("sample weights must be finite and non-negative"));
        }
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            return Ok(SampleWeights::uniform(raw.len()));
        }
        Ok(SampleWeights(raw.into_iter().map(|w| w / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_rate(eta: f64) -> Result<()> {
    if eta.is_finite() && eta >= 0.0 {
        Ok(())
    } else {
        Err(GraceError::config(format!("learning rate {eta} must be finite and non-negative")))
    }
}

fn check_meta(meta: &LabeledGraph) -> Result<()> {
    if meta.num_nodes() == 0 {
        Err(GraceError::config("meta graph is empty"))
    } else {
        Ok(())
    }
}

fn finite_or_err(p: ModelParams) -> Result<ModelParams> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(GraceError::numeric("parameters became non-finite"))
    }
}

/// Meta-graph loss (eval mode, uniform weights) and its gradient.
pub fn meta_gradients(params: &ModelParams, meta: &LabeledGraph) -> Result<(f64, ModelParams)> {
    model::gradients(params, &meta.graph, &meta.targets, None, None)
}

/// One uniform-weight gradient step on the training graph.
pub fn plain_step(
    params: &ModelParams,
    train: &LabeledGraph,
    masks: Option<&DropoutMasks>,
    eta: f64,
) -> Result<(ModelParams, f64)> {
    check_rate(eta)?;
    let (l, g) = model::gradients(params, &train.graph, &train.targets, None, masks)?;
    let mut next = params.clone();
    next.axpy(-eta, &g);
    Ok((finite_or_err(next)?, l))
}

/// Combined-gradient update: lookahead on the main loss, meta loss at the
/// lookahead point, then `θ - η (∇main + λ ∇meta(θ'))`.
pub fn meta_step(
    params: &ModelParams,
    train: &LabeledGraph,
    meta: &LabeledGraph,
    masks: Option<&DropoutMasks>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, StepDiagnostics)> {
    check_meta(meta)?;
    let eta = cfg.learning_rate;
    check_rate(eta)?;
    let (main_loss, g_main) = model::gradients(params, &train.graph, &train.targets, None, masks)?;
    let mut lookahead = params.clone();
    lookahead.axpy(-eta, &g_main);
    let (meta_loss, g_meta) = meta_gradients(&lookahead, meta)?;

    let mut next = params.clone();
    next.axpy(-eta, &g_main);
    if cfg.meta_coefficient != 0.0 {
        next.axpy(-eta * cfg.meta_coefficient, &g_meta);
    }
    let diag = StepDiagnostics {
        main_loss,
        meta_loss,
        main_grad_norm: g_main.norm(),
        meta_grad_norm: g_meta.norm(),
    };
    Ok((finite_or_err(next)?, diag))
}

/// Learning-to-reweight update: each training node is weighted by how much a
/// small step on its own loss would lower the meta loss, then one weighted
/// gradient step is taken.
pub fn reweight_step(
    params: &ModelParams,
    train: &LabeledGraph,
    meta: &LabeledGraph,
    masks: Option<&DropoutMasks>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, SampleWeights, StepDiagnostics)> {
    check_meta(meta)?;
    let eta = cfg.learning_rate;
    check_rate(eta)?;
    let (meta_loss, g_meta) = meta_gradients(params, meta)?;
    let alignment =
        model::per_node_loss_derivatives(params, &g_meta, &train.graph, &train.targets, masks)?;
    let raw: Vec<f64> = alignment
        .iter()
        .map(|&d| (cfg.meta_learning_rate * d).max(0.0))
        .collect();
    let weights = SampleWeights::from_raw(raw)?;
    let (main_loss, g_main) = model::gradients(
        params,
        &train.graph,
        &train.targets,
        Some(weights.as_slice()),
        masks,
    )?;
    let mut next = params.clone();
    next.axpy(-eta, &g_main);
    let diag = StepDiagnostics {
        main_loss,
        meta_loss,
        main_grad_norm: g_main.norm(),
        meta_grad_norm: g_meta.norm(),
    };
    Ok((finite_or_err(next)?, weights, diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main_loss: f64,
    /// Eval-mode meta-graph loss after the epoch's update.
    pub meta_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest meta-graph loss seen (initial ones
    /// included), or the last ones when selection is off.
    pub params: ModelParams,
    /// 0 means the initial parameters were kept.
    pub best_epoch: usize,
    pub initial_meta_loss: f64,
    pub trace: Vec<EpochRecord>,
}

/// Initializes from `cfg.seed` and trains; see [`train_from`].
pub fn train(
    train: &LabeledGraph,
    meta: &LabeledGraph,
    num_outputs: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dims = ModelDims {
        input_dim: train.graph.features.ncols(),
        hidden_dim: cfg.hidden_dim,
        num_outputs,
    };
    let init = ModelParams::init(dims, cfg.layer_kind, cfg.task, derive_seed(cfg.seed, "gnn-init"))?;
    train_from(init, train, meta, cfg)
}

/// Full-batch training for `cfg.epochs` epochs starting at `init`.
pub fn train_from(
    init: ModelParams,
    train: &LabeledGraph,
    meta: &LabeledGraph,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_meta(meta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout"));
    let meta_loss_of = |p: &ModelParams| -> Result<f64> {
        let out = model::forward(p, &meta.graph, None)?;
        model::loss(&out, &meta.targets, None, p.task)
    };
    let initial_meta_loss = meta_loss_of(&init)?;
    let mut best = (initial_meta_loss, 0, init.clone());
    let mut params = init;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let masks = (cfg.dropout_rate > 0.0).then(|| {
            DropoutMasks::sample(train.num_nodes(), cfg.hidden_dim, cfg.dropout_rate, &mut rng)
        });
        let (next, diag) = if cfg.reweight {
            let (p, _, d) = reweight_step(&params, train, meta, masks.as_ref(), cfg)?;
            (p, d)
        } else {
            meta_step(&params, train, meta, masks.as_ref(), cfg)?
        };
        params = next;
        let meta_loss = meta_loss_of(&params)?;
        if !meta_loss.is_finite() {
            return Err(GraceError::numeric(format!("meta loss diverged at epoch {epoch}")));
        }
        if meta_loss < best.0 || (!cfg.select_by_meta_loss && epoch == cfg.epochs) {
            best = (meta_loss, epoch, params.clone());
        }
        log::debug!("epoch {epoch}: main {:.6} meta {meta_loss:.6}", diag.main_loss);
        trace.push(EpochRecord {
            epoch,
            main_loss: diag.main_loss,
            meta_loss,
        });
    }
    Ok(TrainOutcome {
        params: best.2,
        best_epoch: best.1,
        initial_meta_loss,
        trace,
    })
}
