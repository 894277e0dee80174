//! Greedy modularity community detection (Louvain local-moving phase, repeated
//! until no node move improves modularity).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Partition};

const GAIN_EPS: f64 = 1e-12;
const MAX_SWEEPS: usize = 1_000;

/// Deterministic single-level modularity clustering.
///
/// Nodes are visited in an order shuffled by `seed`. A node moves only when a
/// neighbouring community strictly improves modularity; among equally good
/// candidates the lowest community id wins. Isolated nodes stay singletons and
/// nodes in different connected components are never merged.
pub fn communities(g: &Graph, seed: u64) -> Partition {
    let n = g.num_nodes();
    let mut comm: Vec<usize> = (0..n).collect();
    if g.num_edges() == 0 {
        return Partition::from_raw(&comm);
    }
    let two_m = (2 * g.num_edges()) as f64;
    let mut tot: Vec<f64> = (0..n).map(|v| g.degree(v) as f64).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut links = vec![0.0f64; n];
    let mut touched: Vec<usize> = Vec::new();

    for _ in 0..MAX_SWEEPS {
        let mut moved = false;
        for &v in &order {
            let k = g.degree(v) as f64;
            if k == 0.0 {
                continue;
            }
            let own = comm[v];
            tot[own] -= k;

            for &u in g.neighbors(v) {
                let c = comm[u];
                if links[c] == 0.0 {
                    touched.push(c);
                }
                links[c] += 1.0;
            }
            touched.sort_unstable();

            let gain = |c: usize, links: &[f64]| links[c] - k * tot[c] / two_m;
            let mut best = own;
            let mut best_gain = gain(own, &links);
            for &c in &touched {
                if c == own {
                    continue;
                }
                let gc = gain(c, &links);
                if gc > best_gain + GAIN_EPS {
                    best = c;
                    best_gain = gc;
                }
            }

            for &c in &touched {
                links[c] = 0.0;
            }
            touched.clear();

            tot[best] += k;
            if best != own {
                comm[v] = best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Partition::from_raw(&comm)
}

/// Newman modularity of a partition.
pub fn modularity(g: &Graph, p: &Partition) -> f64 {
    let m = g.num_edges() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let mut internal = vec![0.0; p.num_communities];
    let mut tot = vec![0.0; p.num_communities];
    for v in 0..g.num_nodes() {
        tot[p.community_id[v]] += g.degree(v) as f64;
    }
    for (u, v) in g.edges() {
        if p.community_id[u] == p.community_id[v] {
            internal[p.community_id[u]] += 1.0;
        }
    }
    internal
        .iter()
        .zip(&tot)
        .map(|(l, d)| l / m - (d / (2.0 * m)).powi(2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_triangles_split() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        for seed in 0..5 {
            let p = communities(&g, seed);
            assert_eq!(p.num_communities, 2);
            assert_eq!(p.community_id[0], p.community_id[2]);
            assert_ne!(p.community_id[0], p.community_id[3]);
        }
    }

    #[test]
    fn isolated_nodes_are_singletons() {
        let p = communities(&Graph::empty(5), 3);
        assert_eq!(p.num_communities, 5);
    }

    #[test]
    fn single_triangle_one_community() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(communities(&g, 11).num_communities, 1);
    }

    #[test]
    fn barbell_is_cut_at_bridge() {
        // two K4 joined by a single edge
        let mut edges = Vec::new();
        for a in 0..4 {
            for b in (a + 1)..4 {
                edges.push((a, b));
                edges.push((a + 4, b + 4));
            }
        }
        edges.push((3, 4));
        let g = Graph::from_edges(8, &edges).unwrap();
        let p = communities(&g, 0);
        assert_eq!(p.num_communities, 2);
        assert!(modularity(&g, &p) > 0.3);
    }
}
