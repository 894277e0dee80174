//! Seeded synthetic data: two Gaussian blobs with a controlled minority share,
//! their similarity graph at a target density, and optional toy notes.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{GraceError, Result};
use crate::graph::Graph;
use crate::matrix::FeatureMatrix;
use crate::psn::{build_psn, pairwise_cosines};
use crate::text::{EmotiveLexicon, TokenizedNote};

pub const DEFAULT_TARGET_DEGREE: f64 = 45.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub dim: usize,
    /// Share of label-1 nodes, in (0, 0.5].
    pub minority_fraction: f64,
    /// Per-coordinate distance between the class means, in standard deviations.
    pub class_separation: f64,
    /// Extra random cross-class edges as a fraction of the similarity edges.
    pub noise_edges_fraction: f64,
    pub target_avg_degree: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 1000,
            dim: 16,
            minority_fraction: 0.1,
            class_separation: 1.0,
            noise_edges_fraction: 0.0,
            target_avg_degree: DEFAULT_TARGET_DEGREE,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 20 {
            return Err(GraceError::config(format!("num_nodes {} < 20", self.num_nodes)));
        }
        if self.dim < 2 {
            return Err(GraceError::config(format!("dim {} < 2", self.dim)));
        }
        if !(self.minority_fraction > 0.0 && self.minority_fraction <= 0.5) {
            return Err(GraceError::config(format!(
                "minority_fraction {} outside (0, 0.5]",
                self.minority_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.noise_edges_fraction) {
            return Err(GraceError::config(format!(
                "noise_edges_fraction {} outside [0, 1)",
                self.noise_edges_fraction
            )));
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return Err(GraceError::config("class_separation must be finite and non-negative"));
        }
        let max_degree = (self.num_nodes - 1) as f64;
        if !(self.target_avg_degree > 0.0 && self.target_avg_degree < max_degree) {
            return Err(GraceError::config(format!(
                "target_avg_degree {} outside (0, {max_degree})",
                self.target_avg_degree
            )));
        }
        Ok(())
    }

    pub fn minority_count(&self) -> usize {
        // guard against products like 0.1 * 30 = 3.0000000000000004
        let exact = self.minority_fraction * self.num_nodes as f64;
        let rounded = exact.round();
        if (exact - rounded).abs() < 1e-9 {
            rounded as usize
        } else {
            exact.ceil() as usize
        }
    }
}

/// Blob features and labels (1 = minority).
pub fn generate(cfg: &SynthConfig) -> Result<(FeatureMatrix, Vec<usize>)> {
    cfg.validate()?;
    let n = cfg.num_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth"));
    let mut labels = vec![0usize; n];
    labels[..cfg.minority_count()].fill(1);
    labels.shuffle(&mut rng);
    let half = cfg.class_separation / 2.0;
    let mut x = Array2::zeros((n, cfg.dim));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let mean = if labels[i] == 1 { half } else { -half };
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = mean + z;
        }
    }
    Ok((FeatureMatrix::new(x)?, labels))
}

/// Highest-precision threshold whose strict-inequality edge count is closest
/// to `target_edges`.
fn bisect_threshold(cosines: &[f64], target_edges: f64) -> f64 {
    let count = |t: f64| cosines.iter().filter(|&&c| c > t).count() as f64;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        let e = count(mid);
        let err = (e - target_edges).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if err <= 0.005 * target_edges {
            break;
        }
        if e > target_edges {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.1
}

#[derive(Debug, Clone)]
pub struct SynthGraph {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    /// Similarity threshold found by bisection.
    pub threshold: f64,
    pub noise_edges: usize,
}

/// Features and labels from [`generate`], linked by their similarity graph at
/// the threshold that hits the target mean degree, plus random cross-class
/// noise edges.
pub fn generate_graph(cfg: &SynthConfig) -> Result<SynthGraph> {
    let (features, labels) = generate(cfg)?;
    let n = cfg.num_nodes;
    let target_edges = cfg.target_avg_degree * n as f64 / 2.0;
    let threshold = bisect_threshold(&pairwise_cosines(&features), target_edges);
    let psn = build_psn(&features, threshold)?;

    let wanted = (cfg.noise_edges_fraction * psn.num_edges() as f64).round() as usize;
    let mut edges: Vec<(usize, usize)> = psn.edges().collect();
    let mut noise_edges = 0;
    if wanted > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth-noise"));
        let minority: Vec<usize> = (0..n).filter(|&v| labels[v] == 1).collect();
        let majority: Vec<usize> = (0..n).filter(|&v| labels[v] == 0).collect();
        let capacity = minority.len() * majority.len();
        let mut seen: HashSet<(usize, usize)> = edges.iter().copied().collect();
        let mut attempts = 0;
        while noise_edges < wanted && attempts < 50 * wanted && seen.len() < capacity + psn.num_edges() {
            attempts += 1;
            let a = minority[rng.random_range(0..minority.len())];
            let b = majority[rng.random_range(0..majority.len())];
            let e = (a.min(b), a.max(b));
            if seen.insert(e) {
                edges.push(e);
                noise_edges += 1;
            }
        }
        if noise_edges < wanted {
            log::warn!("placed {noise_edges} of {wanted} noise edges");
        }
    }
    Ok(SynthGraph {
        graph: Graph::from_edges(n, &edges)?,
        features,
        labels,
        threshold,
        noise_edges,
    })
}

/// Toy notes whose class-indicative phrases appear with probability
/// `signal`, plus a small emotive lexicon.
#[derive(Debug, Clone)]
pub struct SynthText {
    pub notes: Vec<TokenizedNote>,
    pub lexicon: EmotiveLexicon,
}

const FILLER: &[&str] = &[
    "patient", "reports", "history", "of", "use", "daily", "denies", "current", "plan", "review",
    "noted", "today", "stable", "with", "and", "the", "was", "seen", "for", "visit",
];

const PHRASES: [&[&str]; 2] = [
    &["outpatient", "follow", "up", "weekly", "group", "session"],
    &["admit", "inpatient", "unit", "severe", "withdrawal", "risk"],
];

const EMOTIONS: &[(&str, &[&str])] = &[
    ("anger", &["angry", "irritable", "hostile"]),
    ("anxiety", &["anxious", "worried", "nervous"]),
    ("calm", &["calm", "relaxed", "settled"]),
    ("sadness", &["sad", "hopeless", "tearful"]),
];

pub fn generate_text(labels: &[usize], signal: f64, seed: u64) -> Result<SynthText> {
    if !(0.0..=1.0).contains(&signal) {
        return Err(GraceError::config(format!("text signal {signal} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth-text"));
    let mut notes = Vec::with_capacity(labels.len());
    for (id, &label) in labels.iter().enumerate() {
        let mut tokens: Vec<String> = Vec::new();
        let len = rng.random_range(20..40);
        for _ in 0..len {
            let word = if rng.random::<f64>() < 0.1 {
                let (_, words) = EMOTIONS[rng.random_range(0..EMOTIONS.len())];
                words[rng.random_range(0..words.len())]
            } else {
                FILLER[rng.random_range(0..FILLER.len())]
            };
            tokens.push(word.to_string());
        }
        let phrase = PHRASES[label.min(1)];
        if rng.random::<f64>() < signal {
            let start = rng.random_range(0..phrase.len() - 2);
            let at = rng.random_range(0..=tokens.len());
            tokens.splice(at..at, phrase[start..start + 3].iter().map(|w| w.to_string()));
        }
        notes.push(TokenizedNote::new(id, tokens));
    }
    let categories: BTreeMap<String, BTreeSet<String>> = EMOTIONS
        .iter()
        .map(|(name, words)| (name.to_string(), words.iter().map(|w| w.to_string()).collect()))
        .collect();
    Ok(SynthText {
        notes,
        lexicon: EmotiveLexicon::new(categories)?,
    })
}

/// Stratified train/test assignment: `test_fraction` of each class (rounded,
/// at least one node per class when the class has two or more) goes to test.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(GraceError::config(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split"));
    let mut is_test = vec![false; labels.len()];
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    for c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let mut k = (test_fraction * members.len() as f64).round() as usize;
        if members.len() >= 2 {
            k = k.clamp(1, members.len() - 1);
        }
        for &i in &members[..k] {
            is_test[i] = true;
        }
    }
    Ok(is_test)
}
