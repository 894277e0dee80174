//! Patient similarity network: an edge joins two nodes whose feature vectors
//! have cosine similarity strictly above a threshold.

use ndarray::ArrayView1;
use rayon::prelude::*;

use crate::error::{GraceError, Result};
use crate::graph::Graph;
use crate::matrix::FeatureMatrix;

pub const DEFAULT_PSN_THRESHOLD: f64 = 0.8;

fn norm(u: ArrayView1<'_, f64>) -> f64 {
    u.dot(&u).sqrt()
}

fn cosine_with_norms(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, nu: f64, nv: f64) -> Option<f64> {
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    Some((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity, clamped to [-1, 1]. `None` if either vector has zero norm.
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Option<f64> {
    cosine_with_norms(u, v, norm(u), norm(v))
}

pub fn cosine_slices(u: &[f64], v: &[f64]) -> Option<f64> {
    cosine(ArrayView1::from(u), ArrayView1::from(v))
}

/// Exact all-pairs PSN. Zero-norm rows stay isolated and are reported in the log.
pub fn build_psn(x: &FeatureMatrix, threshold: f64) -> Result<Graph> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(GraceError::config(format!(
            "PSN threshold {threshold} outside [-1, 1]"
        )));
    }
    let n = x.num_nodes();
    let norms: Vec<f64> = (0..n).map(|i| norm(x.row(i))).collect();
    if let Some(i) = norms.iter().position(|v| !v.is_finite()) {
        return Err(GraceError::input_at(format!("row {i}"), "non-finite feature norm"));
    }
    let zero_rows = norms.iter().filter(|&&v| v == 0.0).count();
    if zero_rows > 0 {
        log::warn!("{zero_rows} zero-norm feature rows left isolated in the PSN");
    }

    // Per-row neighbour lists computed in parallel, merged in row order.
    let per_row: Vec<Vec<(usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            ((i + 1)..n)
                .filter(|&j| {
                    cosine_with_norms(xi, x.row(j), norms[i], norms[j])
                        .is_some_and(|c| c > threshold)
                })
                .map(|j| (i, j))
                .collect()
        })
        .collect();
    let edges: Vec<(usize, usize)> = per_row.into_iter().flatten().collect();
    Graph::from_edges(n, &edges)
}

/// All pairwise cosine similarities `(i < j)` in row-major pair order;
/// undefined pairs are skipped.
pub fn pairwise_cosines(x: &FeatureMatrix) -> Vec<f64> {
    let n = x.num_nodes();
    let norms: Vec<f64> = (0..n).map(|i| norm(x.row(i))).collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .filter_map(|j| cosine_with_norms(x.row(i), x.row(j), norms[i], norms[j]))
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}
