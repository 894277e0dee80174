//! Depth-adaptive weighted tree norm.
//!
//! The norm of a graph sums, over every node `v`, the sizes of the levels
//! `1..=L_v` of the computation tree rooted at `v`. Level `l` of that tree has
//! one vertex per length-`l` walk from `v`, so level sizes are walk counts.
//! Level `l` is weighted by `lambda_v^(l-1)` with `lambda_v = exp(-alpha) * d~_v`,
//! and the depth `L_v` shrinks as the normalized degree `d~_v` grows.

use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};
use crate::graph::{induced_subgraph, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeNormConfig {
    pub min_depth: usize,
    pub max_depth: usize,
    pub alpha: f64,
}

impl Default for TreeNormConfig {
    fn default() -> Self {
        TreeNormConfig {
            min_depth: 1,
            max_depth: 4,
            alpha: 1.0,
        }
    }
}

impl TreeNormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_depth < 1 || self.max_depth < self.min_depth {
            return Err(GraceError::config(format!(
                "tree-norm depths must satisfy 1 <= min ({}) <= max ({})",
                self.min_depth, self.max_depth
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(GraceError::config(format!(
                "tree-norm alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Min-max normalized degrees. A degenerate range (all degrees equal) maps
/// every node to 0.5.
pub fn normalized_degrees(g: &Graph) -> Vec<f64> {
    let deg = g.degrees();
    let (Some(&lo), Some(&hi)) = (deg.iter().min(), deg.iter().max()) else {
        return Vec::new();
    };
    if hi == lo {
        return vec![0.5; deg.len()];
    }
    let span = (hi - lo) as f64;
    deg.iter().map(|&d| (d - lo) as f64 / span).collect()
}

pub fn normalized_degree(g: &Graph, v: usize) -> f64 {
    normalized_degrees(g)[v]
}

/// `floor(L_max - (L_max - L_min) * d~)`, clamped to `[L_min, L_max]`.
pub fn depth_for(norm_degree: f64, cfg: &TreeNormConfig) -> usize {
    let lmax = cfg.max_depth as f64;
    let lmin = cfg.min_depth as f64;
    let raw = (lmax - (lmax - lmin) * norm_degree).floor();
    (raw.max(lmin).min(lmax)) as usize
}

pub fn node_depth(g: &Graph, v: usize, cfg: &TreeNormConfig) -> usize {
    depth_for(normalized_degree(g, v), cfg)
}

/// `counts[l][v]` = number of length-`l` walks starting at `v`, for `l` in `0..=max_len`.
pub fn walk_counts(g: &Graph, max_len: usize) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut counts = Vec::with_capacity(max_len + 1);
    counts.push(vec![1.0; n]);
    for l in 1..=max_len {
        let prev = &counts[l - 1];
        let next: Vec<f64> = (0..n)
            .map(|v| g.neighbors(v).iter().map(|&u| prev[u]).sum())
            .collect();
        counts.push(next);
    }
    counts
}

/// Tree norm with per-node depths and decay factors held fixed.
pub fn tree_norm_with(g: &Graph, depths: &[usize], decay: &[f64]) -> f64 {
    let max_len = depths.iter().copied().max().unwrap_or(0);
    let counts = walk_counts(g, max_len);
    let mut total = 0.0;
    for v in 0..g.num_nodes() {
        let mut weight = 1.0;
        for level in counts.iter().take(depths[v] + 1).skip(1) {
            total += weight * level[v];
            weight *= decay[v];
        }
    }
    total
}

/// Per-node depth and decay factor derived from the graph's own degree range.
pub fn node_parameters(g: &Graph, cfg: &TreeNormConfig) -> (Vec<usize>, Vec<f64>) {
    let nd = normalized_degrees(g);
    let scale = (-cfg.alpha).exp();
    let depths = nd.iter().map(|&d| depth_for(d, cfg)).collect();
    let decay = nd.iter().map(|&d| scale * d).collect();
    (depths, decay)
}

pub fn tree_norm(g: &Graph, cfg: &TreeNormConfig) -> f64 {
    if g.num_edges() == 0 {
        return 0.0;
    }
    let (depths, decay) = node_parameters(g, cfg);
    tree_norm_with(g, &depths, &decay)
}

/// `tree_norm(g) - tree_norm(g[s])`, each graph normalized by its own degree range.
pub fn tree_norm_gap(g: &Graph, s: &[usize], cfg: &TreeNormConfig) -> Result<f64> {
    let sub = induced_subgraph(g, s)?;
    Ok(tree_norm(g, cfg) - tree_norm(&sub.graph, cfg))
}
