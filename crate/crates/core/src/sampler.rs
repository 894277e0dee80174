//! Genetic-algorithm selection of a meta-graph: a fixed-size node subset whose
//! induced subgraph keeps the structural and semantic profile of the training
//! graph.
//!
//! Every fitness component compares one statistic of the induced subgraph
//! against the same statistic of the full graph and is mapped to `[0, 1]`,
//! where 1 means "identical". Ratios go through `1 / (1 + |r - 1|)`, the
//! assortativity and tree-norm components through a gap form.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::communities;
use crate::error::{GraceError, Result};
use crate::graph::{assortativity, avg_clustering, avg_degree, induced_subgraph, Graph};
use crate::matrix::{total_variance_of_rows, FeatureMatrix};
use crate::treenorm::{tree_norm, TreeNormConfig};

pub const DEFAULT_META_FRACTION: f64 = 0.10;
const TREE_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub elitism_count: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 50,
            generations: 100,
            crossover_rate: 0.8745703676281257,
            mutation_rate: 0.21873583752075254,
            tournament_size: 3,
            elitism_count: 2,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(GraceError::config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if self.population_size == 0 || self.tournament_size == 0 {
            return Err(GraceError::config(
                "population_size and tournament_size must be positive",
            ));
        }
        if self.elitism_count > self.population_size {
            return Err(GraceError::config(format!(
                "elitism_count {} exceeds population_size {}",
                self.elitism_count, self.population_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessBreakdown {
    pub f_deg: f64,
    pub f_clust: f64,
    pub f_assort: f64,
    pub f_comm: f64,
    pub f_var: f64,
    pub f_tn_score: f64,
    pub f_struct: f64,
    pub f_sem: f64,
    pub f_total: f64,
}

impl FitnessBreakdown {
    fn assemble(structural: [f64; 4], semantic: [f64; 2]) -> Self {
        let [f_deg, f_clust, f_assort, f_comm] = structural;
        let [f_var, f_tn_score] = semantic;
        let f_struct = f_deg + f_comm + f_clust + f_assort;
        let f_sem = f_var + f_tn_score;
        FitnessBreakdown {
            f_deg,
            f_clust,
            f_assort,
            f_comm,
            f_var,
            f_tn_score,
            f_struct,
            f_sem,
            f_total: f_struct + f_sem,
        }
    }
}

/// `1 / (1 + |r - 1|)` for a non-negative ratio.
pub fn closeness(ratio: f64) -> Result<f64> {
    if !ratio.is_finite() || ratio < 0.0 {
        return Err(GraceError::domain(format!(
            "closeness needs a finite non-negative ratio, got {ratio}"
        )));
    }
    Ok(1.0 / (1.0 + (ratio - 1.0).abs()))
}

/// Closeness of `meta / full`, with 0/0 scoring 1 and x/0 (x > 0) scoring 0.
pub fn ratio_score(meta: f64, full: f64) -> Result<f64> {
    if full == 0.0 {
        return Ok(if meta == 0.0 { 1.0 } else { 0.0 });
    }
    closeness(meta / full)
}

/// `1 / (1 + |gap| / max(scale, eps))`.
pub fn gap_score(gap: f64, scale: f64) -> f64 {
    1.0 / (1.0 + gap.abs() / scale.max(TREE_NORM_EPS))
}

/// Assortativity agreement: `1 / (1 + |rho_meta - rho_full|)`; both undefined
/// scores 1, exactly one undefined scores 0.
pub fn assortativity_score(meta: Option<f64>, full: Option<f64>) -> f64 {
    match (meta, full) {
        (Some(a), Some(b)) => 1.0 / (1.0 + (a - b).abs()),
        (None, None) => 1.0,
        _ => 0.0,
    }
}

/// Graph statistics compared by the fitness function.
#[derive(Debug, Clone, Copy, PartialEq)]
struct StructureProfile {
    avg_degree: f64,
    clustering: f64,
    assortativity: Option<f64>,
    communities: usize,
}

impl StructureProfile {
    fn of(g: &Graph, seed: u64) -> Result<Self> {
        Ok(StructureProfile {
            avg_degree: avg_degree(g)?,
            clustering: avg_clustering(g)?,
            assortativity: assortativity(g),
            communities: communities(g, seed).num_communities,
        })
    }

    fn scores(&self, full: &StructureProfile) -> Result<[f64; 4]> {
        Ok([
            ratio_score(self.avg_degree, full.avg_degree)?,
            ratio_score(self.clustering, full.clustering)?,
            assortativity_score(self.assortativity, full.assortativity),
            ratio_score(self.communities as f64, full.communities as f64)?,
        ])
    }
}

fn validate_subset(g: &Graph, s: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = s.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(GraceError::input("meta-node set contains duplicates"));
    }
    if let Some(&bad) = sorted.last().filter(|&&v| v >= g.num_nodes()) {
        return Err(GraceError::input(format!(
            "meta node {bad} out of range for {} nodes",
            g.num_nodes()
        )));
    }
    if sorted.is_empty() {
        return Err(GraceError::domain("meta-node set is empty"));
    }
    Ok(sorted)
}

/// `(f_deg, f_clust, f_assort, f_comm)`; `seed` drives community detection on
/// both graphs.
pub fn structural_fitness(g: &Graph, s: &[usize], seed: u64) -> Result<[f64; 4]> {
    let s = validate_subset(g, s)?;
    let sub = induced_subgraph(g, &s)?;
    StructureProfile::of(&sub.graph, seed)?.scores(&StructureProfile::of(g, seed)?)
}

/// `(f_var, f_tn_score)`.
pub fn semantic_fitness(
    g: &Graph,
    s: &[usize],
    x: &FeatureMatrix,
    cfg: &TreeNormConfig,
) -> Result<[f64; 2]> {
    let evaluator = FitnessEvaluator::new(g, x, *cfg, 0)?;
    let s = validate_subset(g, s)?;
    evaluator.semantic(&s)
}

pub fn total_fitness(
    g: &Graph,
    s: &[usize],
    x: &FeatureMatrix,
    cfg: &TreeNormConfig,
    seed: u64,
) -> Result<FitnessBreakdown> {
    FitnessEvaluator::new(g, x, *cfg, seed)?.evaluate(s)
}

/// Fitness of subsets of one graph, with the full-graph reference statistics
/// computed once.
pub struct FitnessEvaluator<'a> {
    graph: &'a Graph,
    features: &'a FeatureMatrix,
    tree_cfg: TreeNormConfig,
    community_seed: u64,
    full: StructureProfile,
    full_variance: f64,
    full_tree_norm: f64,
}

impl<'a> FitnessEvaluator<'a> {
    pub fn new(
        graph: &'a Graph,
        features: &'a FeatureMatrix,
        tree_cfg: TreeNormConfig,
        community_seed: u64,
    ) -> Result<Self> {
        tree_cfg.validate()?;
        if features.num_nodes() != graph.num_nodes() {
            return Err(GraceError::input(format!(
                "feature matrix has {} rows for a graph with {} nodes",
                features.num_nodes(),
                graph.num_nodes()
            )));
        }
        Ok(FitnessEvaluator {
            graph,
            features,
            tree_cfg,
            community_seed,
            full: StructureProfile::of(graph, community_seed)?,
            full_variance: features.total_variance(),
            full_tree_norm: tree_norm(graph, &tree_cfg),
        })
    }

    fn semantic(&self, sorted: &[usize]) -> Result<[f64; 2]> {
        if sorted.len() < 2 {
            return Err(GraceError::domain(
                "feature variance needs at least two meta nodes",
            ));
        }
        let var = total_variance_of_rows(self.features, Some(sorted));
        let f_var = ratio_score(var, self.full_variance)?;
        let sub = induced_subgraph(self.graph, sorted)?;
        let gap = self.full_tree_norm - tree_norm(&sub.graph, &self.tree_cfg);
        Ok([f_var, gap_score(gap, self.full_tree_norm)])
    }

    pub fn evaluate(&self, s: &[usize]) -> Result<FitnessBreakdown> {
        let sorted = validate_subset(self.graph, s)?;
        let sub = induced_subgraph(self.graph, &sorted)?;
        let structural =
            StructureProfile::of(&sub.graph, self.community_seed)?.scores(&self.full)?;
        let semantic = self.semantic(&sorted)?;
        Ok(FitnessBreakdown::assemble(structural, semantic))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct MetaGraph {
    /// Selected node ids of the source graph, ascending.
    pub nodes: Vec<usize>,
    /// Induced subgraph; node `i` corresponds to `nodes[i]`.
    pub graph: Graph,
    pub fitness: FitnessBreakdown,
    pub trace: Vec<TracePoint>,
}

/// Number of meta nodes for a graph of `n` nodes.
pub fn meta_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GraceError::config(format!(
            "meta fraction {fraction} outside (0, 1]"
        )));
    }
    let k = (fraction * n as f64).ceil() as usize;
    if k < 2 {
        return Err(GraceError::config(format!(
            "meta fraction {fraction} of {n} nodes leaves fewer than 2 meta nodes"
        )));
    }
    Ok(k.min(n))
}

/// Slots per class, proportional to inverse class frequency, at least one per
/// present class when `k` allows, never more than the class size.
fn class_quotas(labels: &[usize], k: usize) -> Vec<(Vec<usize>, usize)> {
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (v, &c) in labels.iter().enumerate() {
        members[c].push(v);
    }
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            log::warn!("class {c} has no nodes in the training graph");
        }
    }
    let present: Vec<Vec<usize>> = members.into_iter().filter(|m| !m.is_empty()).collect();
    let inv: Vec<f64> = present.iter().map(|m| 1.0 / m.len() as f64).collect();
    let inv_sum: f64 = inv.iter().sum();
    let ideal: Vec<f64> = inv.iter().map(|w| k as f64 * w / inv_sum).collect();
    let mut quota: Vec<usize> = ideal
        .iter()
        .zip(&present)
        .map(|(&q, m)| (q.floor() as usize).clamp(1, m.len()))
        .collect();

    let mut total: usize = quota.iter().sum();
    // hand out missing slots by largest remainder, then by spare capacity
    while total < k {
        let pick = (0..present.len())
            .filter(|&c| quota[c] < present[c].len())
            .max_by(|&a, &b| {
                (ideal[a] - quota[a] as f64)
                    .total_cmp(&(ideal[b] - quota[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("k never exceeds the number of nodes");
        quota[pick] += 1;
        total += 1;
    }
    while total > k {
        let pick = (0..present.len())
            .filter(|&c| quota[c] > 0)
            .max_by(|&a, &b| {
                (quota[a] as f64 - ideal[a])
                    .total_cmp(&(quota[b] as f64 - ideal[b]))
                    .then(b.cmp(&a))
            })
            .expect("total > 0");
        quota[pick] -= 1;
        total -= 1;
    }
    present.into_iter().zip(quota).collect()
}

fn stratified_chromosome(quotas: &[(Vec<usize>, usize)], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chrom = Vec::new();
    for (members, q) in quotas {
        chrom.extend(sample(rng, members.len(), *q).into_iter().map(|i| members[i]));
    }
    chrom.sort_unstable();
    chrom
}

fn crossover(a: &[usize], b: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut union: Vec<usize> = a.iter().chain(b).copied().collect();
    union.sort_unstable();
    union.dedup();
    let mut child: Vec<usize> = sample(rng, union.len(), k)
        .into_iter()
        .map(|i| union[i])
        .collect();
    child.sort_unstable();
    child
}

fn mutate(chrom: &mut [usize], n: usize, rate: f64, rng: &mut ChaCha8Rng) {
    let k = chrom.len();
    if k >= n || rate == 0.0 {
        return;
    }
    let per_gene = rate / k as f64;
    let mut selected = vec![false; n];
    for &v in chrom.iter() {
        selected[v] = true;
    }
    for gene in chrom.iter_mut() {
        if rng.random::<f64>() < per_gene {
            let replacement = loop {
                let cand = rng.random_range(0..n);
                if !selected[cand] {
                    break cand;
                }
            };
            selected[*gene] = false;
            selected[replacement] = true;
            *gene = replacement;
        }
    }
    chrom.sort_unstable();
}

fn tournament(fitness: &[f64], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..size {
        let cand = rng.random_range(0..fitness.len());
        if fitness[cand] > fitness[best] || (fitness[cand] == fitness[best] && cand < best) {
            best = cand;
        }
    }
    best
}

fn is_valid_chromosome(c: &[usize], k: usize, n: usize) -> bool {
    c.len() == k && c.windows(2).all(|w| w[0] < w[1]) && c.last().is_none_or(|&v| v < n)
}

struct FitnessCache<'e, 'g> {
    evaluator: &'e FitnessEvaluator<'g>,
    cache: HashMap<Vec<usize>, FitnessBreakdown>,
}

impl FitnessCache<'_, '_> {
    fn fitness_of(&mut self, population: &[Vec<usize>]) -> Result<Vec<f64>> {
        let mut missing: Vec<&Vec<usize>> = population
            .iter()
            .filter(|c| !self.cache.contains_key(*c))
            .collect();
        missing.sort();
        missing.dedup();
        let evaluated: Vec<Result<FitnessBreakdown>> = missing
            .par_iter()
            .map(|c| self.evaluator.evaluate(c))
            .collect();
        for (c, f) in missing.into_iter().zip(evaluated) {
            self.cache.insert(c.clone(), f?);
        }
        Ok(population.iter().map(|c| self.cache[c].f_total).collect())
    }
}

fn trace_point(generation: usize, fitness: &[f64]) -> TracePoint {
    let best = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
    TracePoint {
        generation,
        best,
        mean,
    }
}

/// Runs the genetic algorithm and returns the best chromosome ever seen.
///
/// `labels` is one class id per node and only shapes the initial population,
/// which gives every present class at least one slot with slots weighted by
/// inverse class frequency. `community_seed` fixes community detection inside
/// the fitness function.
pub fn ga_sample(
    g: &Graph,
    x: &FeatureMatrix,
    labels: &[usize],
    ga: &GaConfig,
    tn: &TreeNormConfig,
    fraction: f64,
) -> Result<MetaGraph> {
    ga.validate()?;
    let n = g.num_nodes();
    if n < 20 {
        return Err(GraceError::input(format!(
            "meta-graph sampling needs at least 20 nodes, got {n}"
        )));
    }
    if labels.len() != n {
        return Err(GraceError::input(format!(
            "{} labels for a graph with {n} nodes",
            labels.len()
        )));
    }
    let k = meta_size(n, fraction)?;
    let community_seed = crate::derive_seed(ga.seed, "fitness-communities");
    let evaluator = FitnessEvaluator::new(g, x, *tn, community_seed)?;
    let mut cache = FitnessCache {
        evaluator: &evaluator,
        cache: HashMap::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ga.seed);

    let quotas = class_quotas(labels, k);
    let mut population: Vec<Vec<usize>> = (0..ga.population_size)
        .map(|_| stratified_chromosome(&quotas, &mut rng))
        .collect();
    let mut fitness = cache.fitness_of(&population)?;
    let mut trace = vec![trace_point(0, &fitness)];

    let best_of = |pop: &[Vec<usize>], fit: &[f64]| -> (Vec<usize>, f64) {
        let i = (0..fit.len())
            .max_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(b.cmp(&a)))
            .expect("non-empty population");
        (pop[i].clone(), fit[i])
    };
    let (mut best, mut best_fit) = best_of(&population, &fitness);

    for generation in 1..=ga.generations {
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));

        let mut next: Vec<Vec<usize>> = ranked
            .iter()
            .take(ga.elitism_count)
            .map(|&i| population[i].clone())
            .collect();
        while next.len() < ga.population_size {
            let p1 = tournament(&fitness, ga.tournament_size, &mut rng);
            let p2 = tournament(&fitness, ga.tournament_size, &mut rng);
            let mut child = if rng.random::<f64>() < ga.crossover_rate {
                crossover(&population[p1], &population[p2], k, &mut rng)
            } else {
                population[p1].clone()
            };
            mutate(&mut child, n, ga.mutation_rate, &mut rng);
            assert!(
                is_valid_chromosome(&child, k, n),
                "offspring lost the fixed-size distinct-id invariant"
            );
            next.push(child);
        }
        population = next;
        fitness = cache.fitness_of(&population)?;
        trace.push(trace_point(generation, &fitness));
        let (cand, cand_fit) = best_of(&population, &fitness);
        if cand_fit > best_fit {
            best = cand;
            best_fit = cand_fit;
        }
    }

    let fitness = cache.cache[&best];
    let graph = induced_subgraph(g, &best)?.graph;
    Ok(MetaGraph {
        nodes: best,
        graph,
        fitness,
        trace,
    })
}
