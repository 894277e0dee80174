//! Undirected, unweighted graphs stored as sorted CSR neighbor lists, plus the
//! structural statistics used by the meta-graph fitness function.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};

/// Undirected simple graph. Neighbor lists are sorted, symmetric and free of
/// self-loops and duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    num_edges: usize,
}

impl Graph {
    /// Builds a graph from an edge list. Duplicate edges (in either
    /// orientation) collapse to one and self-loops are dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraceError::input_at(
                    format!("edge {i}"),
                    format!("({u}, {v}) references a node id >= {num_nodes}"),
                ));
            }
            if u == v {
                continue;
            }
            lists[u].push(v);
            lists[v].push(u);
        }
        Ok(Self::from_lists(lists))
    }

    fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut targets = Vec::new();
        for list in lists.iter_mut() {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        let num_edges = targets.len() / 2;
        Graph {
            offsets,
            targets,
            num_edges,
        }
    }

    /// A graph with `num_nodes` isolated nodes.
    pub fn empty(num_nodes: usize) -> Self {
        Graph {
            offsets: vec![0; num_nodes + 1],
            targets: Vec::new(),
            num_edges: 0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn isolated_count(&self) -> usize {
        (0..self.num_nodes()).filter(|&v| self.degree(v) == 0).count()
    }

    /// Full scan of the structural invariants; used by tests and debug asserts.
    pub fn check_invariants(&self) -> bool {
        let n = self.num_nodes();
        let mut degree_sum = 0;
        for v in 0..n {
            let nb = self.neighbors(v);
            degree_sum += nb.len();
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return false;
            }
            if nb.iter().any(|&u| u == v || u >= n || !self.has_edge(u, v)) {
                return false;
            }
        }
        degree_sum == 2 * self.num_edges
    }
}

/// Convenience wrapper matching the edge-list constructor.
pub fn build_graph(edges: &[(usize, usize)], num_nodes: usize) -> Result<Graph> {
    Graph::from_edges(num_nodes, edges)
}

/// `2|E| / |V|`.
pub fn avg_degree(g: &Graph) -> Result<f64> {
    if g.num_nodes() == 0 {
        return Err(GraceError::domain("average degree of a graph with no nodes"));
    }
    Ok(2.0 * g.num_edges() as f64 / g.num_nodes() as f64)
}

/// Number of triangles through `v`, by sorted-list intersection.
pub fn triangles_at(g: &Graph, v: usize) -> usize {
    let nv = g.neighbors(v);
    let mut count = 0;
    for (i, &a) in nv.iter().enumerate() {
        let na = g.neighbors(a);
        // count common neighbours b of v and a with b > a to see each pair once
        let rest = &nv[i + 1..];
        let (mut p, mut q) = (0, 0);
        while p < rest.len() && q < na.len() {
            match rest[p].cmp(&na[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
    }
    count
}

pub fn local_clustering(g: &Graph, v: usize) -> f64 {
    let d = g.degree(v);
    if d < 2 {
        return 0.0;
    }
    let pairs = (d * (d - 1) / 2) as f64;
    triangles_at(g, v) as f64 / pairs
}

/// Mean of local clustering coefficients; nodes with degree < 2 count as 0.
pub fn avg_clustering(g: &Graph) -> Result<f64> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(GraceError::domain("clustering of a graph with no nodes"));
    }
    let total: f64 = (0..n).map(|v| local_clustering(g, v)).sum();
    Ok(total / n as f64)
}

/// Degree assortativity: Pearson correlation of endpoint degrees over both
/// orientations of every edge. `None` when there are no edges or every edge
/// endpoint has the same degree.
pub fn assortativity(g: &Graph) -> Option<f64> {
    if g.num_edges() == 0 {
        return None;
    }
    let deg = g.degrees();
    let m2 = (2 * g.num_edges()) as f64;
    // Both orientations make the x and y marginals identical.
    let mut sum = 0.0;
    for (u, v) in g.edges() {
        sum += (deg[u] + deg[v]) as f64;
    }
    let mean = sum / m2;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (u, v) in g.edges() {
        let a = deg[u] as f64 - mean;
        let b = deg[v] as f64 - mean;
        cov += 2.0 * a * b;
        var += a * a + b * b;
    }
    if var <= 0.0 {
        return None;
    }
    Some((cov / var).clamp(-1.0, 1.0))
}

/// Community assignment with contiguous labels `0..num_communities`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub community_id: Vec<usize>,
    pub num_communities: usize,
}

impl Partition {
    /// Relabels arbitrary ids to contiguous labels in order of first appearance.
    pub fn from_raw(raw: &[usize]) -> Self {
        let mut map: HashMap<usize, usize> = HashMap::new();
        let community_id = raw
            .iter()
            .map(|&c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
            .collect();
        Partition {
            community_id,
            num_communities: map.len(),
        }
    }
}

/// Subgraph induced by `nodes`, together with the old→new id map. New ids
/// follow ascending old id order.
#[derive(Debug, Clone)]
pub struct InducedSubgraph {
    pub graph: Graph,
    /// `nodes[new_id] = old_id`
    pub nodes: Vec<usize>,
    pub old_to_new: HashMap<usize, usize>,
}

pub fn induced_subgraph(g: &Graph, nodes: &[usize]) -> Result<InducedSubgraph> {
    let n = g.num_nodes();
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&v| v >= n) {
        return Err(GraceError::input(format!(
            "node id {bad} out of range for a graph with {n} nodes"
        )));
    }
    let mut new_id = vec![usize::MAX; n];
    for (i, &v) in sorted.iter().enumerate() {
        new_id[v] = i;
    }
    let lists = sorted
        .iter()
        .map(|&v| {
            g.neighbors(v)
                .iter()
                .filter_map(|&u| (new_id[u] != usize::MAX).then_some(new_id[u]))
                .collect()
        })
        .collect();
    let old_to_new = sorted.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    Ok(InducedSubgraph {
        graph: Graph::from_lists(lists),
        nodes: sorted,
        old_to_new,
    })
}
