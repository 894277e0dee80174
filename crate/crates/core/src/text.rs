//! Lexical and emotive note features.
//!
//! Lexical features are trigrams whose note-level presence differs between the
//! two classes according to a likelihood-ratio (G) test. Emotive features are
//! per-category lexicon hit rates. [`assemble_features`] concatenates them with
//! precomputed base and reason embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{GraceError, Result};
use crate::matrix::{BlockLayout, FeatureMatrix};

pub const DEFAULT_P_THRESHOLD: f64 = 0.01;

pub type Trigram = [String; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedNote {
    pub node_id: usize,
    pub tokens: Vec<String>,
}

impl TokenizedNote {
    pub fn new(node_id: usize, tokens: Vec<String>) -> Self {
        TokenizedNote { node_id, tokens }
    }

    pub fn from_text(node_id: usize, text: &str) -> Self {
        TokenizedNote {
            node_id,
            tokens: text.split_whitespace().map(str::to_lowercase).collect(),
        }
    }

    pub fn trigrams(&self) -> impl Iterator<Item = Trigram> + '_ {
        self.tokens
            .windows(3)
            .map(|w| [w[0].clone(), w[1].clone(), w[2].clone()])
    }
}

/// Which class a selected trigram is indicative of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indicative {
    A,
    B,
}

/// Note-level presence counts for one trigram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Contingency {
    /// class-A notes containing the trigram
    pub n11: u64,
    /// class-A notes without it
    pub n12: u64,
    /// class-B notes containing the trigram
    pub n21: u64,
    /// class-B notes without it
    pub n22: u64,
}

#[derive(Debug, Clone)]
pub struct TrigramStats {
    pub notes_a: u64,
    pub notes_b: u64,
    pub table: BTreeMap<Trigram, Contingency>,
}

/// Counts note-level trigram presence per class. `class_a[i]` marks whether
/// note `i` belongs to class A.
pub fn count_trigrams(notes: &[TokenizedNote], class_a: &[bool]) -> Result<TrigramStats> {
    if notes.len() != class_a.len() {
        return Err(GraceError::input(format!(
            "{} notes but {} class labels",
            notes.len(),
            class_a.len()
        )));
    }
    let notes_a = class_a.iter().filter(|&&a| a).count() as u64;
    let notes_b = class_a.len() as u64 - notes_a;
    if notes_a == 0 || notes_b == 0 {
        return Err(GraceError::domain(
            "trigram counting needs at least one note of each class",
        ));
    }
    let mut present: BTreeMap<Trigram, (u64, u64)> = BTreeMap::new();
    for (note, &is_a) in notes.iter().zip(class_a) {
        let unique: BTreeSet<Trigram> = note.trigrams().collect();
        for tri in unique {
            let e = present.entry(tri).or_default();
            if is_a {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    let table = present
        .into_iter()
        .map(|(tri, (a, b))| {
            (
                tri,
                Contingency {
                    n11: a,
                    n12: notes_a - a,
                    n21: b,
                    n22: notes_b - b,
                },
            )
        })
        .collect();
    Ok(TrigramStats {
        notes_a,
        notes_b,
        table,
    })
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Likelihood-ratio statistic `G = 2 (ll_alt - ll_null)` for a 2x2 table whose
/// rows are the classes. Under the null it is chi-squared with one degree of
/// freedom.
pub fn llr_statistic(n11: u64, n12: u64, n21: u64, n22: u64) -> Result<f64> {
    let (a, b, c, d) = (n11 as f64, n12 as f64, n21 as f64, n22 as f64);
    let row1 = a + b;
    let row2 = c + d;
    if row1 == 0.0 || row2 == 0.0 {
        return Err(GraceError::domain(format!(
            "contingency table ({n11}, {n12}, {n21}, {n22}) has an empty class row"
        )));
    }
    let n = row1 + row2;
    let p_present = (a + c) / n;
    let p_absent = (b + d) / n;
    let ll_null = xlogy(a, p_present) + xlogy(b, p_absent) + xlogy(c, p_present) + xlogy(d, p_absent);
    let ll_alt = xlogy(a, a / row1) + xlogy(b, b / row1) + xlogy(c, c / row2) + xlogy(d, d / row2);
    Ok((2.0 * (ll_alt - ll_null)).max(0.0))
}

/// Upper chi-squared(1) critical value for significance level `p`.
pub fn chi2_critical(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(GraceError::config(format!("p threshold {p} outside (0, 1)")));
    }
    let dist = ChiSquared::new(1.0).map_err(|e| GraceError::numeric(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTrigram {
    pub trigram: Trigram,
    pub indicative: Indicative,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SelectedTrigrams {
    pub items: Vec<SelectedTrigram>,
}

impl SelectedTrigrams {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count_indicative(&self, class: Indicative) -> usize {
        self.items.iter().filter(|t| t.indicative == class).count()
    }
}

/// Keeps trigrams whose statistic exceeds the chi-squared(1) critical value at
/// `p_threshold`, ordered by descending statistic then lexicographically.
pub fn select_trigrams(stats: &TrigramStats, p_threshold: f64) -> Result<SelectedTrigrams> {
    let critical = chi2_critical(p_threshold)?;
    let mut items = Vec::new();
    for (tri, c) in &stats.table {
        let g = llr_statistic(c.n11, c.n12, c.n21, c.n22)?;
        if g > critical {
            let rate_a = c.n11 as f64 / (c.n11 + c.n12) as f64;
            let rate_b = c.n21 as f64 / (c.n21 + c.n22) as f64;
            let indicative = if rate_a >= rate_b {
                Indicative::A
            } else {
                Indicative::B
            };
            items.push(SelectedTrigram {
                trigram: tri.clone(),
                indicative,
                statistic: g,
            });
        }
    }
    items.sort_by(|x, y| {
        y.statistic
            .total_cmp(&x.statistic)
            .then_with(|| x.trigram.cmp(&y.trigram))
    });
    Ok(SelectedTrigrams { items })
}

/// Raw occurrence count of each selected trigram in the note.
pub fn lexical_vector(note: &TokenizedNote, sel: &SelectedTrigrams) -> Vec<f64> {
    let mut counts: HashMap<Trigram, usize> = HashMap::new();
    for tri in note.trigrams() {
        *counts.entry(tri).or_default() += 1;
    }
    sel.items
        .iter()
        .map(|t| counts.get(&t.trigram).copied().unwrap_or(0) as f64)
        .collect()
}

/// Category → word set. Categories are kept in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotiveLexicon {
    categories: BTreeMap<String, BTreeSet<String>>,
}

impl EmotiveLexicon {
    pub fn new(categories: BTreeMap<String, BTreeSet<String>>) -> Result<Self> {
        if let Some((name, _)) = categories.iter().find(|(_, words)| words.is_empty()) {
            return Err(GraceError::input(format!("lexicon category '{name}' is empty")));
        }
        Ok(EmotiveLexicon { categories })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text)
            .map_err(|e| GraceError::input_at(format!("line {}", e.line()), e.to_string()))?;
        let categories = raw
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|w| w.to_lowercase()).collect()))
            .collect();
        Self::new(categories)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    /// Words of one category, sorted; empty for an unknown category.
    pub fn words(&self, category: &str) -> impl Iterator<Item = &str> {
        self.categories.get(category).into_iter().flatten().map(String::as_str)
    }
}

/// Per category, the fraction of note tokens that belong to it.
pub fn emotive_vector(note: &TokenizedNote, lex: &EmotiveLexicon) -> Result<Vec<f64>> {
    if note.tokens.is_empty() {
        return Err(GraceError::domain(format!(
            "note {} has no tokens",
            note.node_id
        )));
    }
    let total = note.tokens.len() as f64;
    Ok(lex
        .categories
        .values()
        .map(|words| {
            let hits = note.tokens.iter().filter(|t| words.contains(*t)).count();
            hits as f64 / total
        })
        .collect())
}

/// Per-node feature blocks before concatenation. Empty blocks are allowed but
/// every node must agree on each block's width.
#[derive(Debug, Clone, Default)]
pub struct NodeBlocks {
    pub base: Vec<f64>,
    pub lex: Vec<f64>,
    pub emo: Vec<f64>,
    pub reason: Vec<f64>,
}

/// Concatenates base | lexical | emotive | reason for every node.
pub fn assemble_features(nodes: &[NodeBlocks]) -> Result<FeatureMatrix> {
    let layout = match nodes.first() {
        Some(n) => BlockLayout {
            base_dim: n.base.len(),
            lex_dim: n.lex.len(),
            emo_dim: n.emo.len(),
            reason_dim: n.reason.len(),
        },
        None => BlockLayout::default(),
    };
    let mut data = Vec::with_capacity(nodes.len() * layout.total());
    for (i, n) in nodes.iter().enumerate() {
        let dims = [n.base.len(), n.lex.len(), n.emo.len(), n.reason.len()];
        let expect = [layout.base_dim, layout.lex_dim, layout.emo_dim, layout.reason_dim];
        if dims != expect {
            return Err(GraceError::input_at(
                format!("node {i}"),
                format!("block dims {dims:?} differ from {expect:?}"),
            ));
        }
        data.extend_from_slice(&n.base);
        data.extend_from_slice(&n.lex);
        data.extend_from_slice(&n.emo);
        data.extend_from_slice(&n.reason);
    }
    let arr = Array2::from_shape_vec((nodes.len(), layout.total()), data)
        .map_err(|e| GraceError::input(e.to_string()))?;
    FeatureMatrix::with_layout(arr, layout)
}

/// Vocabulary helper: the distinct tokens of a corpus, sorted.
pub fn vocabulary(notes: &[TokenizedNote]) -> Vec<String> {
    let set: HashSet<&String> = notes.iter().flat_map(|n| n.tokens.iter()).collect();
    let mut v: Vec<String> = set.into_iter().cloned().collect();
    v.sort();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(id: usize, s: &str) -> TokenizedNote {
        TokenizedNote::from_text(id, s)
    }

    fn tri(s: &str) -> Trigram {
        let w: Vec<String> = s.split(' ').map(String::from).collect();
        [w[0].clone(), w[1].clone(), w[2].clone()]
    }

    #[test]
    fn counts_shared_trigram() {
        let notes = vec![
            note(0, "a b c"),
            note(1, "a b c d"),
            note(2, "x a b c"),
            note(3, "a b c"),
        ];
        let stats = count_trigrams(&notes, &[true, true, false, false]).unwrap();
        let c = stats.table[&tri("a b c")];
        assert_eq!((c.n11, c.n12, c.n21, c.n22), (2, 0, 2, 0));
    }

    #[test]
    fn counts_class_specific_trigram() {
        let notes: Vec<_> = (0..6)
            .map(|i| if i < 3 { note(i, "p q r") } else { note(i, "s t u") })
            .collect();
        let labels = [true, true, true, false, false, false];
        let stats = count_trigrams(&notes, &labels).unwrap();
        let c = stats.table[&tri("p q r")];
        assert_eq!((c.n11, c.n12, c.n21, c.n22), (3, 0, 0, 3));
    }

    #[test]
    fn short_note_has_no_trigrams() {
        let notes = vec![note(0, "a b"), note(1, "c d e")];
        let stats = count_trigrams(&notes, &[true, false]).unwrap();
        assert_eq!(stats.table.len(), 1);
        assert_eq!(stats.table[&tri("c d e")].n11, 0);
    }

    #[test]
    fn presence_not_frequency() {
        let notes = vec![note(0, "a b c a b c"), note(1, "z z z")];
        let stats = count_trigrams(&notes, &[true, false]).unwrap();
        assert_eq!(stats.table[&tri("a b c")].n11, 1);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(count_trigrams(&[note(0, "a b c")], &[true]).is_err());
    }

    #[test]
    fn llr_examples() {
        assert_eq!(llr_statistic(5, 5, 5, 5).unwrap(), 0.0);
        let g = llr_statistic(10, 0, 0, 10).unwrap();
        assert!((g - 40.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g - 27.7259).abs() < 1e-4);
        assert_eq!(
            llr_statistic(3, 7, 9, 1).unwrap(),
            llr_statistic(9, 1, 3, 7).unwrap()
        );
        assert!(llr_statistic(0, 0, 3, 4).is_err());
    }

    #[test]
    fn critical_value() {
        assert!((chi2_critical(0.01).unwrap() - 6.6349).abs() < 1e-4);
        assert!(chi2_critical(0.0).is_err());
    }

    #[test]
    fn selection_and_tags() {
        let mut table = BTreeMap::new();
        table.insert(
            tri("a b c"),
            Contingency {
                n11: 10,
                n12: 0,
                n21: 0,
                n22: 10,
            },
        );
        table.insert(
            tri("d e f"),
            Contingency {
                n11: 5,
                n12: 5,
                n21: 5,
                n22: 5,
            },
        );
        table.insert(
            tri("g h i"),
            Contingency {
                n11: 0,
                n12: 10,
                n21: 10,
                n22: 0,
            },
        );
        let stats = TrigramStats {
            notes_a: 10,
            notes_b: 10,
            table,
        };
        let sel = select_trigrams(&stats, 0.01).unwrap();
        assert_eq!(sel.len(), 2);
        assert_eq!(sel.items[0].trigram, tri("a b c"));
        assert_eq!(sel.items[0].indicative, Indicative::A);
        assert_eq!(sel.items[1].indicative, Indicative::B);
        assert_eq!(sel.count_indicative(Indicative::A), 1);
    }

    #[test]
    fn lexical_counts() {
        let sel = SelectedTrigrams {
            items: vec![
                SelectedTrigram {
                    trigram: tri("a b c"),
                    indicative: Indicative::A,
                    statistic: 10.0,
                },
                SelectedTrigram {
                    trigram: tri("x y z"),
                    indicative: Indicative::B,
                    statistic: 9.0,
                },
            ],
        };
        assert_eq!(lexical_vector(&note(0, "a b c q a b c"), &sel), vec![2.0, 0.0]);
        assert_eq!(lexical_vector(&note(0, "nothing here"), &sel), vec![0.0, 0.0]);
    }

    #[test]
    fn emotive_rates() {
        let lex = EmotiveLexicon::from_json(r#"{"fear": ["afraid", "scared"], "anger": ["mad"]}"#)
            .unwrap();
        let n = note(0, "i am afraid and scared of the dark at night");
        assert_eq!(n.tokens.len(), 10);
        let v = emotive_vector(&n, &lex).unwrap();
        // categories in lexicographic order: anger, fear
        assert_eq!(v, vec![0.0, 0.2]);
        assert_eq!(
            emotive_vector(&note(0, "calm day"), &lex).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(emotive_vector(&TokenizedNote::new(1, vec![]), &lex).is_err());
    }

    #[test]
    fn lexicon_size() {
        let map: BTreeMap<String, Vec<String>> = (0..194)
            .map(|i| (format!("cat{i:03}"), vec![format!("w{i}")]))
            .collect();
        let lex = EmotiveLexicon::from_json(&serde_json::to_string(&map).unwrap()).unwrap();
        let v = emotive_vector(&note(0, "w1 w2 w3"), &lex).unwrap();
        assert_eq!(v.len(), 194);
        assert!(EmotiveLexicon::from_json(r#"{"empty": []}"#).is_err());
    }

    #[test]
    fn assembly_dims() {
        let make = |b, l, e, r| NodeBlocks {
            base: vec![0.5; b],
            lex: vec![1.0; l],
            emo: vec![0.1; e],
            reason: vec![-0.5; r],
        };
        let full = assemble_features(&[make(384, 723, 194, 384)]).unwrap();
        assert_eq!(full.dim(), 1685);
        let two = assemble_features(&[make(384, 723, 0, 0)]).unwrap();
        assert_eq!(two.dim(), 1107);
        let outer = assemble_features(&[make(384, 0, 0, 384)]).unwrap();
        assert_eq!(outer.dim(), 768);
        assert!(assemble_features(&[make(3, 2, 1, 0), make(3, 1, 1, 0)]).is_err());
    }
}
