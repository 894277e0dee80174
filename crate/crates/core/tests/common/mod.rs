//! Shared helpers for integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use grace_core::gnn::model::{self, activation_pattern, DropoutMasks, PreparedGraph, Targets};
use grace_core::gnn::train::{meta_gradients, LabeledGraph};
use grace_core::gnn::{LayerKind, ModelDims, ModelParams, TaskMode};
use grace_core::graph::Graph;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi graph.
pub fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn random_targets(n: usize, task: TaskMode, outputs: usize, rng: &mut ChaCha8Rng) -> Targets {
    match task {
        TaskMode::BinarySoftmax => Targets::Classes((0..n).map(|_| rng.random_range(0..outputs)).collect()),
        TaskMode::MultilabelSigmoid => {
            Targets::Multilabel(Array2::from_shape_simple_fn((n, outputs), || f64::from(u8::from(rng.random::<bool>()))))
        }
    }
}

/// Which loss a gradient check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossPath {
    /// Weighted training loss at θ.
    Main,
    /// Meta-graph loss at the lookahead point θ' = θ - η ∇main(θ).
    MetaAtLookahead,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub total: usize,
}

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor so that entries that are analytically zero compare by
/// absolute difference.
pub const REL_FLOOR: f64 = 1e-6;

fn loss_at(p: &ModelParams, g: &PreparedGraph, t: &Targets, w: Option<&[f64]>, m: Option<&DropoutMasks>) -> f64 {
    let out = model::forward(p, g, m).unwrap();
    model::loss(&out, t, w, p.task).unwrap()
}

fn compare(
    point: &ModelParams,
    analytic: &ModelParams,
    graph: &PreparedGraph,
    targets: &Targets,
    weights: Option<&[f64]>,
    masks: Option<&DropoutMasks>,
) -> GradCheck {
    let base_pattern = activation_pattern(point, graph, masks).unwrap();
    let theta = point.to_flat();
    let grad = analytic.to_flat();
    let mut probe = point.clone();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for i in 0..theta.len() {
        let mut flat = theta.clone();
        flat[i] = theta[i] + FD_STEP;
        probe.set_flat(&flat);
        let plus_ok = activation_pattern(&probe, graph, masks).unwrap() == base_pattern;
        let lp = loss_at(&probe, graph, targets, weights, masks);
        flat[i] = theta[i] - FD_STEP;
        probe.set_flat(&flat);
        let minus_ok = activation_pattern(&probe, graph, masks).unwrap() == base_pattern;
        let lm = loss_at(&probe, graph, targets, weights, masks);
        if !(plus_ok && minus_ok) {
            continue;
        }
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    GradCheck {
        max_rel_error: max_rel,
        checked,
        total: theta.len(),
    }
}

/// Analytic gradient vs central differences on a random graph of at most 15
/// nodes. Dropout is disabled.
pub fn gradient_check(kind: LayerKind, task: TaskMode, path: LossPath, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let n = r.random_range(8..=15);
    let g = random_graph(n, 0.3, &mut r);
    let outputs = if task == TaskMode::BinarySoftmax { 2 } else { 3 };
    let dims = ModelDims {
        input_dim: 3,
        hidden_dim: 5,
        num_outputs: outputs,
    };
    let params = ModelParams::init(dims, kind, task, seed).unwrap();
    let x = random_matrix(n, 3, &mut r);
    let targets = random_targets(n, task, outputs, &mut r);
    let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    match path {
        LossPath::Main => {
            let pg = PreparedGraph::new(&g, &x, kind).unwrap();
            let (_, analytic) = model::gradients(&params, &pg, &targets, Some(&weights), None).unwrap();
            compare(&params, &analytic, &pg, &targets, Some(&weights), None)
        }
        LossPath::MetaAtLookahead => {
            let train = LabeledGraph::new(&g, &x, targets.clone(), kind).unwrap();
            let meta_nodes: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
            let meta = LabeledGraph::induced(&g, &x, &targets, &meta_nodes, kind).unwrap();
            let (_, g_main) = model::gradients(&params, &train.graph, &train.targets, None, None).unwrap();
            let mut lookahead = params.clone();
            lookahead.axpy(-0.1, &g_main);
            let (_, analytic) = meta_gradients(&lookahead, &meta).unwrap();
            compare(&lookahead, &analytic, &meta.graph, &meta.targets, None, None)
        }
    }
}

/// Dense 0/1 adjacency.
pub fn adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.num_nodes();
    let mut a = vec![vec![false; n]; n];
    for (u, v) in g.edges() {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

/// Mean local clustering by checking every neighbour pair.
pub fn brute_clustering(g: &Graph) -> f64 {
    let a = adjacency(g);
    let n = g.num_nodes();
    let mut total = 0.0;
    for v in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&u| a[v][u]).collect();
        let k = nb.len();
        if k < 2 {
            continue;
        }
        let mut links = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                if a[nb[i]][nb[j]] {
                    links += 1;
                }
            }
        }
        total += links as f64 / (k * (k - 1) / 2) as f64;
    }
    total / n as f64
}

/// Pearson correlation of endpoint degrees over both orientations of every
/// edge, computed with explicit means then deviations.
pub fn pearson_assortativity(g: &Graph) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (u, v) in g.edges() {
        let (du, dv) = (g.degree(u) as f64, g.degree(v) as f64);
        xs.extend([du, dv]);
        ys.extend([dv, du]);
    }
    if xs.is_empty() {
        return None;
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Likelihood-ratio statistic as `2 Σ O ln(O / E)` over the four cells.
pub fn llr_oracle(n11: u64, n12: u64, n21: u64, n22: u64) -> f64 {
    let o = [n11 as f64, n12 as f64, n21 as f64, n22 as f64];
    let total: f64 = o.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let rows = [o[0] + o[1], o[2] + o[3]];
    let cols = [o[0] + o[2], o[1] + o[3]];
    let mut g = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let obs = o[2 * r + c];
            if obs > 0.0 {
                let expected = rows[r] * cols[c] / total;
                g += obs * (obs / expected).ln();
            }
        }
    }
    (2.0 * g).max(0.0)
}

/// Level sizes 1..=depth of the computation tree of `v`, found by expanding
/// the tree one level at a time as an explicit list of vertices.
pub fn computation_tree_levels(g: &Graph, v: usize, depth: usize) -> Vec<usize> {
    let mut frontier = vec![v];
    let mut sizes = Vec::with_capacity(depth);
    for _ in 0..depth {
        let next: Vec<usize> = frontier.iter().flat_map(|&u| g.neighbors(u).iter().copied()).collect();
        sizes.push(next.len());
        frontier = next;
    }
    sizes
}

/// Tree norm from first principles: per-node normalized degree, depth and
/// decay, then explicit computation-tree level sizes.
pub fn tree_norm_oracle(g: &Graph, min_depth: usize, max_depth: usize, alpha: f64) -> f64 {
    let n = g.num_nodes();
    if n == 0 {
        return 0.0;
    }
    let deg: Vec<f64> = (0..n).map(|v| g.degree(v) as f64).collect();
    let dmin = deg.iter().cloned().fold(f64::INFINITY, f64::min);
    let dmax = deg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in 0..n {
        let nd = if dmax == dmin { 0.5 } else { (deg[v] - dmin) / (dmax - dmin) };
        let raw = (max_depth as f64 - (max_depth - min_depth) as f64 * nd).floor() as usize;
        let depth = raw.clamp(min_depth, max_depth);
        let lambda = (-alpha).exp() * nd;
        for (l, size) in computation_tree_levels(g, v, depth).into_iter().enumerate() {
            total += lambda.powi(l as i32) * size as f64;
        }
    }
    total
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auroc_pairs(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        if !positive[i] {
            continue;
        }
        for j in 0..scores.len() {
            if positive[j] {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Connected component id per node.
pub fn components(g: &Graph) -> Vec<usize> {
    let n = g.num_nodes();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(u) = stack.pop() {
            for &w in g.neighbors(u) {
                if comp[w] == usize::MAX {
                    comp[w] = next;
                    stack.push(w);
                }
            }
        }
        next += 1;
    }
    comp
}

/// A synthetic graph cut into a training subgraph and a held-out test subgraph
/// with no edges between them.
pub struct SynthSplit {
    pub train_graph: Graph,
    pub train_x: Array2<f64>,
    pub train_labels: Vec<usize>,
    pub test: PreparedGraph,
    pub test_labels: Vec<usize>,
}

pub fn split_synth(cfg: &grace_core::synth::SynthConfig, test_fraction: f64, kind: LayerKind) -> SynthSplit {
    use grace_core::graph::induced_subgraph;
    let sg = grace_core::synth::generate_graph(cfg).unwrap();
    let is_test = grace_core::synth::stratified_split(&sg.labels, test_fraction, cfg.seed).unwrap();
    let n = sg.labels.len();
    let tr: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    let te: Vec<usize> = (0..n).filter(|&i| is_test[i]).collect();
    let x = sg.features.data();
    let test_x = x.select(ndarray::Axis(0), &te);
    let test_graph = induced_subgraph(&sg.graph, &te).unwrap().graph;
    SynthSplit {
        train_graph: induced_subgraph(&sg.graph, &tr).unwrap().graph,
        train_x: x.select(ndarray::Axis(0), &tr),
        train_labels: tr.iter().map(|&i| sg.labels[i]).collect(),
        test: PreparedGraph::new(&test_graph, &test_x, kind).unwrap(),
        test_labels: te.iter().map(|&i| sg.labels[i]).collect(),
    }
}

/// Minority-class F1 and AUROC on the test subgraph.
pub fn minority_scores(params: &ModelParams, split: &SynthSplit) -> (f64, Option<f64>) {
    let pred = model::predict(params, &split.test).unwrap();
    let report = grace_core::metrics::binary_report(&pred.positive_scores(), &pred.classes(), &split.test_labels).unwrap();
    (report.class("1").unwrap().f1, report.auroc)
}
