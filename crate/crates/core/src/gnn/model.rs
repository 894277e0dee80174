//! Forward pass, losses and hand-derived reverse- and forward-mode derivatives.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::params::{GraphLayerParams, LayerKind, ModelParams, TaskMode};
use crate::error::{GraceError, Result};
use crate::graph::Graph;

/// Sparse propagation operator in CSR form.
#[derive(Debug, Clone)]
pub struct Propagator {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Propagator {
    /// Row-normalized adjacency; isolated nodes get an all-zero row.
    pub fn mean(g: &Graph) -> Self {
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for v in 0..g.num_nodes() {
            let nb = g.neighbors(v);
            let w = 1.0 / nb.len().max(1) as f64;
            cols.extend_from_slice(nb);
            vals.extend(std::iter::repeat_n(w, nb.len()));
            offsets.push(cols.len());
        }
        Propagator { offsets, cols, vals }
    }

    /// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
    pub fn sym_norm(g: &Graph) -> Self {
        let inv_sqrt: Vec<f64> = (0..g.num_nodes())
            .map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt())
            .collect();
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for v in 0..g.num_nodes() {
            // neighbours are sorted; splice the self loop in order
            let nb = g.neighbors(v);
            let split = nb.partition_point(|&u| u < v);
            for &u in nb[..split].iter().chain(std::iter::once(&v)).chain(&nb[split..]) {
                cols.push(u);
                vals.push(inv_sqrt[v] * inv_sqrt[u]);
            }
            offsets.push(cols.len());
        }
        Propagator { offsets, cols, vals }
    }

    /// Reorders every row's entries by the content of the referenced feature
    /// row, so that summation order (and thus every rounding) does not depend
    /// on how nodes happen to be numbered. Exact ties keep id order.
    fn order_by_content(&mut self, features: &Array2<f64>) {
        let key = |a: usize, b: usize| {
            features
                .row(a)
                .iter()
                .zip(features.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        };
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for v in 0..self.num_rows() {
            let range = self.offsets[v]..self.offsets[v + 1];
            entries.clear();
            entries.extend(self.cols[range.clone()].iter().copied().zip(self.vals[range.clone()].iter().copied()));
            entries.sort_by(|a, b| key(a.0, b.0));
            for (k, (c, w)) in range.zip(&entries) {
                self.cols[k] = *c;
                self.vals[k] = *w;
            }
        }
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `P H`
    pub fn apply(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for v in 0..self.num_rows() {
            let mut row = out.row_mut(v);
            for k in self.offsets[v]..self.offsets[v + 1] {
                row.scaled_add(self.vals[k], &h.row(self.cols[k]));
            }
        }
        out
    }

    /// `P^T Y`
    pub fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(y.raw_dim());
        for v in 0..self.num_rows() {
            let src = y.row(v);
            for k in self.offsets[v]..self.offsets[v + 1] {
                out.row_mut(self.cols[k]).scaled_add(self.vals[k], &src);
            }
        }
        out
    }
}

/// A graph with its features and the propagation operator for one layer kind.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub features: Array2<f64>,
    pub kind: LayerKind,
    prop: Propagator,
}

impl PreparedGraph {
    pub fn new(g: &Graph, features: &Array2<f64>, kind: LayerKind) -> Result<Self> {
        if features.nrows() != g.num_nodes() {
            return Err(GraceError::input(format!(
                "{} feature rows for a graph with {} nodes",
                features.nrows(),
                g.num_nodes()
            )));
        }
        let mut prop = match kind {
            LayerKind::MeanAgg => Propagator::mean(g),
            LayerKind::NormAdj => Propagator::sym_norm(g),
        };
        prop.order_by_content(features);
        Ok(PreparedGraph {
            features: features.as_standard_layout().into_owned(),
            kind,
            prop,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }
}

/// Inverted-dropout masks (entries 0 or `1/(1-p)`) for the three hidden
/// representations that feed layer 1, layer 2 and the head.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub masks: [Array2<f64>; 3],
}

impl DropoutMasks {
    pub fn sample<R: Rng>(num_nodes: usize, hidden: usize, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let mut draw = || {
            Array2::from_shape_simple_fn((num_nodes, hidden), || {
                if rate > 0.0 && rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
        };
        DropoutMasks {
            masks: [draw(), draw(), draw()],
        }
    }
}

/// Supervision for a set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One class id per node.
    Classes(Vec<usize>),
    /// Node x label 0/1 matrix.
    Multilabel(Array2<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Multilabel(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Targets restricted to `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Multilabel(m) => Targets::Multilabel(m.select(Axis(0), idx)),
        }
    }
}

fn check_targets(outputs_cols: usize, n: usize, targets: &Targets, task: TaskMode) -> Result<()> {
    if targets.len() != n {
        return Err(GraceError::input(format!(
            "{} targets for {n} nodes",
            targets.len()
        )));
    }
    match (task, targets) {
        (TaskMode::BinarySoftmax, Targets::Classes(c)) => {
            if let Some((i, &l)) = c.iter().enumerate().find(|(_, &l)| l >= outputs_cols) {
                return Err(GraceError::input_at(
                    format!("node {i}"),
                    format!("label {l} out of range for {outputs_cols} classes"),
                ));
            }
            Ok(())
        }
        (TaskMode::MultilabelSigmoid, Targets::Multilabel(m)) => {
            if m.ncols() != outputs_cols {
                return Err(GraceError::input(format!(
                    "{} label columns for {outputs_cols} outputs",
                    m.ncols()
                )));
            }
            Ok(())
        }
        _ => Err(GraceError::input("target kind does not match the task mode")),
    }
}

/// Weights normalized to sum 1; `None` means uniform. All-zero weights stay zero.
pub(crate) fn normalized_weights(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / n.max(1) as f64; n]),
        Some(w) => {
            if w.len() != n {
                return Err(GraceError::input(format!("{} sample weights for {n} nodes", w.len())));
            }
            if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(GraceError::input("sample weights must be finite and non-negative"));
            }
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                Ok(vec![0.0; n])
            } else {
                Ok(w.iter().map(|v| v / total).collect())
            }
        }
    }
}

struct LayerCache {
    /// layer input after dropout
    input: Array2<f64>,
    /// propagated input (`M H` or `Â H`)
    propagated: Array2<f64>,
    pre: Array2<f64>,
}

/// Intermediate values of one forward pass.
struct ForwardCache {
    pre_in: Array2<f64>,
    layers: Vec<LayerCache>,
    head_input: Array2<f64>,
    logits: Array2<f64>,
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

fn relu_grad(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn apply_mask(h: Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => h * m,
        None => h,
    }
}

fn check_shapes(params: &ModelParams, graph: &PreparedGraph, masks: Option<&DropoutMasks>) -> Result<()> {
    if graph.kind != params.kind {
        return Err(GraceError::input("graph prepared for a different layer kind"));
    }
    if graph.features.ncols() != params.dims.input_dim {
        return Err(GraceError::input(format!(
            "features have {} columns, model expects {}",
            graph.features.ncols(),
            params.dims.input_dim
        )));
    }
    if let Some(m) = masks {
        let want = (graph.num_nodes(), params.dims.hidden_dim);
        if m.masks.iter().any(|a| a.dim() != want) {
            return Err(GraceError::input("dropout mask shape mismatch"));
        }
    }
    Ok(())
}

fn layer_forward(
    layer: &GraphLayerParams,
    kind: LayerKind,
    prop: &Propagator,
    input: Array2<f64>,
) -> LayerCache {
    let propagated = prop.apply(&input);
    let pre = match kind {
        LayerKind::MeanAgg => {
            let w_neigh = layer.w_neigh.as_ref().expect("mean layer has neighbour weight");
            let bias = layer.bias.as_ref().expect("mean layer has bias");
            input.dot(&layer.w_self) + propagated.dot(w_neigh) + bias
        }
        LayerKind::NormAdj => propagated.dot(&layer.w_self),
    };
    LayerCache {
        input,
        propagated,
        pre,
    }
}

fn forward_cached(
    params: &ModelParams,
    graph: &PreparedGraph,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardCache> {
    check_shapes(params, graph, masks)?;
    let pre_in = graph.features.dot(&params.w_in) + &params.b_in;
    let mut h = relu(&pre_in);
    let mut layers = Vec::with_capacity(2);
    for (i, layer) in params.layers.iter().enumerate() {
        let input = apply_mask(h, masks.map(|m| &m.masks[i]));
        let cache = layer_forward(layer, params.kind, &graph.prop, input);
        h = relu(&cache.pre);
        layers.push(cache);
    }
    let head_input = apply_mask(h, masks.map(|m| &m.masks[2]));
    let logits = head_input.dot(&params.w_out) + &params.b_out;
    Ok(ForwardCache {
        pre_in,
        layers,
        head_input,
        logits,
    })
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn outputs_from_logits(task: TaskMode, logits: &Array2<f64>) -> Array2<f64> {
    match task {
        TaskMode::BinarySoftmax => log_softmax_rows(logits),
        TaskMode::MultilabelSigmoid => logits.clone(),
    }
}

/// Per-node outputs: log-probabilities in softmax mode, logits in multilabel
/// mode. Dropout is applied iff `masks` is given (train mode).
pub fn forward(
    params: &ModelParams,
    graph: &PreparedGraph,
    masks: Option<&DropoutMasks>,
) -> Result<Array2<f64>> {
    let cache = forward_cached(params, graph, masks)?;
    Ok(outputs_from_logits(params.task, &cache.logits))
}

/// Unweighted loss of each node.
pub fn per_node_losses(outputs: &Array2<f64>, targets: &Targets, task: TaskMode) -> Result<Vec<f64>> {
    check_targets(outputs.ncols(), outputs.nrows(), targets, task)?;
    Ok(match targets {
        Targets::Classes(c) => c.iter().enumerate().map(|(i, &y)| -outputs[[i, y]]).collect(),
        Targets::Multilabel(t) => {
            let l = outputs.ncols() as f64;
            outputs
                .rows()
                .into_iter()
                .zip(t.rows())
                .map(|(z, y)| z.iter().zip(y).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / l)
                .collect()
        }
    })
}

/// Weighted mean loss. `weights` are normalized to sum 1 (uniform if `None`).
pub fn loss(
    outputs: &Array2<f64>,
    targets: &Targets,
    weights: Option<&[f64]>,
    task: TaskMode,
) -> Result<f64> {
    let per_node = per_node_losses(outputs, targets, task)?;
    let w = normalized_weights(weights, per_node.len())?;
    Ok(per_node.iter().zip(&w).map(|(l, w)| l * w).sum())
}

/// d(per-node loss)/d(logits), unweighted.
fn logit_grad(task: TaskMode, logits: &Array2<f64>, targets: &Targets) -> Array2<f64> {
    match (task, targets) {
        (TaskMode::BinarySoftmax, Targets::Classes(c)) => {
            let mut g = log_softmax_rows(logits).mapv(f64::exp);
            for (i, &y) in c.iter().enumerate() {
                g[[i, y]] -= 1.0;
            }
            g
        }
        (TaskMode::MultilabelSigmoid, Targets::Multilabel(t)) => {
            let l = logits.ncols() as f64;
            let mut g = logits.mapv(sigmoid);
            g -= t;
            g / l
        }
        _ => unreachable!("targets checked against the task"),
    }
}

fn col_sum(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(0))
}

/// Loss and its exact gradient with respect to every parameter.
pub fn gradients(
    params: &ModelParams,
    graph: &PreparedGraph,
    targets: &Targets,
    weights: Option<&[f64]>,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, ModelParams)> {
    let cache = forward_cached(params, graph, masks)?;
    let outputs = outputs_from_logits(params.task, &cache.logits);
    let per_node = per_node_losses(&outputs, targets, params.task)?;
    let w = normalized_weights(weights, per_node.len())?;
    let loss_value = per_node.iter().zip(&w).map(|(l, w)| l * w).sum();

    let mut grad = params.zeros_like();
    let w_col = Array1::from(w).insert_axis(Axis(1));
    let d_logits = logit_grad(params.task, &cache.logits, targets) * &w_col;

    grad.w_out = cache.head_input.t().dot(&d_logits);
    grad.b_out = col_sum(&d_logits);
    let mut d_h = d_logits.dot(&params.w_out.t());
    if let Some(m) = masks {
        d_h *= &m.masks[2];
    }

    for i in (0..params.layers.len()).rev() {
        let lc = &cache.layers[i];
        let layer = &params.layers[i];
        let d_pre = d_h * relu_grad(&lc.pre);
        let gl = &mut grad.layers[i];
        let mut d_input = match params.kind {
            LayerKind::MeanAgg => {
                let w_neigh = layer.w_neigh.as_ref().expect("mean layer");
                gl.w_self = lc.input.t().dot(&d_pre);
                gl.w_neigh = Some(lc.propagated.t().dot(&d_pre));
                gl.bias = Some(col_sum(&d_pre));
                d_pre.dot(&layer.w_self.t()) + graph.prop.apply_transpose(&d_pre.dot(&w_neigh.t()))
            }
            LayerKind::NormAdj => {
                gl.w_self = lc.propagated.t().dot(&d_pre);
                graph.prop.apply_transpose(&d_pre.dot(&layer.w_self.t()))
            }
        };
        if let Some(m) = masks {
            d_input *= &m.masks[i];
        }
        d_h = d_input;
    }

    let d_pre_in = d_h * relu_grad(&cache.pre_in);
    grad.w_in = graph.features.t().dot(&d_pre_in);
    grad.b_in = col_sum(&d_pre_in);
    for b in grad.blocks() {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(GraceError::numeric("non-finite gradient"));
        }
    }
    Ok((loss_value, grad))
}

/// Directional derivative of every node's unweighted loss along `direction`
/// in parameter space (forward-mode differentiation of the network).
pub fn per_node_loss_derivatives(
    params: &ModelParams,
    direction: &ModelParams,
    graph: &PreparedGraph,
    targets: &Targets,
    masks: Option<&DropoutMasks>,
) -> Result<Vec<f64>> {
    let cache = forward_cached(params, graph, masks)?;
    check_targets(cache.logits.ncols(), cache.logits.nrows(), targets, params.task)?;

    let mut dot_pre = graph.features.dot(&direction.w_in) + &direction.b_in;
    let mut dot_h = dot_pre * relu_grad(&cache.pre_in);
    for (i, lc) in cache.layers.iter().enumerate() {
        let layer = &params.layers[i];
        let dl = &direction.layers[i];
        let dot_input = apply_mask(dot_h, masks.map(|m| &m.masks[i]));
        let dot_prop = graph.prop.apply(&dot_input);
        dot_pre = match params.kind {
            LayerKind::MeanAgg => {
                let w_neigh = layer.w_neigh.as_ref().expect("mean layer");
                let dw_neigh = dl.w_neigh.as_ref().expect("mean layer");
                let db = dl.bias.as_ref().expect("mean layer");
                dot_input.dot(&layer.w_self)
                    + lc.input.dot(&dl.w_self)
                    + dot_prop.dot(w_neigh)
                    + lc.propagated.dot(dw_neigh)
                    + db
            }
            LayerKind::NormAdj => dot_prop.dot(&layer.w_self) + lc.propagated.dot(&dl.w_self),
        };
        dot_h = dot_pre * relu_grad(&lc.pre);
    }
    let dot_head = apply_mask(dot_h, masks.map(|m| &m.masks[2]));
    let dot_logits =
        dot_head.dot(&params.w_out) + cache.head_input.dot(&direction.w_out) + &direction.b_out;
    let g = logit_grad(params.task, &cache.logits, targets);
    Ok((g * dot_logits).sum_axis(Axis(1)).to_vec())
}

/// ReLU activation pattern of every hidden unit (for derivative tests that
/// must avoid non-differentiable points).
pub fn activation_pattern(
    params: &ModelParams,
    graph: &PreparedGraph,
    masks: Option<&DropoutMasks>,
) -> Result<Vec<bool>> {
    let cache = forward_cached(params, graph, masks)?;
    let mut out: Vec<bool> = cache.pre_in.iter().map(|&v| v > 0.0).collect();
    for lc in &cache.layers {
        out.extend(lc.pre.iter().map(|&v| v > 0.0));
    }
    Ok(out)
}

/// Eval-mode predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Softmax: probability of class 1 per node (binary) ; multilabel: per-label sigmoid.
    pub scores: Array2<f64>,
    /// Softmax: argmax class per node; multilabel: one 0/1 column per label.
    pub labels: Array2<usize>,
}

impl Prediction {
    /// Argmax classes (softmax mode).
    pub fn classes(&self) -> Vec<usize> {
        self.labels.column(0).to_vec()
    }

    /// Probability of class 1 (binary softmax mode).
    pub fn positive_scores(&self) -> Vec<f64> {
        self.scores.column(0).to_vec()
    }
}

pub fn predict(params: &ModelParams, graph: &PreparedGraph) -> Result<Prediction> {
    let out = forward(params, graph, None)?;
    Ok(match params.task {
        TaskMode::BinarySoftmax => {
            let n = out.nrows();
            let mut scores = Array2::zeros((n, 1));
            let mut labels = Array2::zeros((n, 1));
            for (i, row) in out.rows().into_iter().enumerate() {
                let arg = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                    .0;
                labels[[i, 0]] = arg;
                scores[[i, 0]] = if row.len() > 1 { row[1].exp() } else { row[0].exp() };
            }
            Prediction { scores, labels }
        }
        TaskMode::MultilabelSigmoid => {
            let scores = out.mapv(sigmoid);
            let labels = scores.mapv(|p| usize::from(p >= 0.5));
            Prediction { scores, labels }
        }
    })
}
