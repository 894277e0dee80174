//! End-to-end acceptance checks. Runs without the libtest harness so that the
//! PASS/FAIL line of every criterion is always printed.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use grace_core::cli::FeatureSidecar;
use grace_core::gnn::checkpoint;
use grace_core::gnn::model::Targets;
use grace_core::gnn::{train, LabeledGraph, LayerKind, TaskMode, TrainConfig};
use grace_core::graph::{assortativity, Graph};
use grace_core::io;
use grace_core::matrix::{BlockLayout, FeatureMatrix};
use grace_core::metrics::{auroc, classification_report};
use grace_core::sampler::{ga_sample, total_fitness, FitnessEvaluator, GaConfig};
use grace_core::synth::{generate_text, SynthConfig};
use grace_core::text::{count_trigrams, llr_statistic, select_trigrams, SelectedTrigrams};
use grace_core::treenorm::{tree_norm, TreeNormConfig};
use rand::seq::index::sample;
use rand::Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradients() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for kind in [LayerKind::MeanAgg, LayerKind::NormAdj] {
        for task in [TaskMode::BinarySoftmax, TaskMode::MultilabelSigmoid] {
            for path in [LossPath::Main, LossPath::MetaAtLookahead] {
                for seed in 0..20 {
                    let c = gradient_check(kind, task, path, seed);
                    ensure(
                        c.checked * 100 >= c.total * 95,
                        format!("{kind:?} {task:?} {path:?} seed {seed}: only {}/{} coordinates away from kinks", c.checked, c.total),
                    )?;
                    worst = worst.max(c.max_rel_error);
                    runs += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-4, format!("max relative error {worst:.2e}"))?;
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("{runs} checks, max relative error {worst:.2e}, {elapsed:.2?}"))
}

fn tree_norms() -> Check {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let n = r.random_range(1..=20);
        let p = r.random_range(0.0..0.5);
        let g = random_graph(n, p, &mut r);
        let min_depth = r.random_range(1..=4);
        let max_depth = r.random_range(min_depth..=4);
        let alpha = r.random_range(0.2..2.0);
        let ours = tree_norm(&g, &TreeNormConfig { min_depth, max_depth, alpha });
        let err = (ours - tree_norm_oracle(&g, min_depth, max_depth, alpha)).abs();
        ensure(err <= 1e-9, format!("graph {i}: error {err:e}"))?;
        worst = worst.max(err);
    }
    let k2 = Graph::from_edges(2, &[(0, 1)]).unwrap();
    let k2_norm = tree_norm(&k2, &TreeNormConfig { min_depth: 2, max_depth: 2, alpha: 1.0 });
    ensure((k2_norm - 2.36788).abs() <= 1e-4, format!("K2 gives {k2_norm}"))?;
    let tri = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let tri_norm = tree_norm(&tri, &TreeNormConfig { min_depth: 1, max_depth: 4, alpha: 1.0 });
    ensure((tri_norm - 8.2073).abs() <= 1e-4, format!("triangle gives {tri_norm}"))?;
    Ok(format!("50 graphs, max abs error {worst:.1e}; K2 {k2_norm:.5}, triangle {tri_norm:.4}"))
}

fn fitness_identity() -> Check {
    let mut r = rng(3);
    let mut graphs = 0;
    while graphs < 20 {
        let n = r.random_range(6..40);
        let g = random_graph(n, r.random_range(0.1..0.5), &mut r);
        if assortativity(&g).is_none() {
            continue;
        }
        let x = FeatureMatrix::new(random_matrix(n, 5, &mut r)).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let f = total_fitness(&g, &all, &x, &TreeNormConfig::default(), graphs).unwrap();
        ensure((f.f_total - 6.0).abs() <= 1e-12, format!("graph {graphs}: {f:?}"))?;
        for part in [f.f_deg, f.f_clust, f.f_assort, f.f_comm, f.f_var, f.f_tn_score] {
            ensure(part == 1.0, format!("graph {graphs}: component {part} != 1"))?;
        }
        graphs += 1;
    }
    Ok("20 graphs score 6".into())
}

fn ga_superiority() -> Check {
    let n = 500;
    let mut wins = 0;
    let mut slowest = Duration::ZERO;
    for seed in 0..10u64 {
        let mut r = rng(400 + seed);
        let g = random_graph(n, 0.02, &mut r);
        let x = FeatureMatrix::new(random_matrix(n, 8, &mut r)).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| usize::from(r.random::<f64>() < 0.2)).collect();
        let ga = GaConfig { seed, ..GaConfig::default() };
        let tn = TreeNormConfig::default();
        let start = Instant::now();
        let meta = ga_sample(&g, &x, &labels, &ga, &tn, 0.1).unwrap();
        slowest = slowest.max(start.elapsed());
        ensure(
            meta.trace.windows(2).all(|w| w[1].best >= w[0].best),
            format!("graph {seed}: best-fitness trace decreased"),
        )?;
        let eval = FitnessEvaluator::new(&g, &x, tn, grace_core::derive_seed(seed, "fitness-communities")).unwrap();
        let best_random = (0..100)
            .map(|_| eval.evaluate(&sample(&mut r, n, meta.nodes.len()).into_vec()).unwrap().f_total)
            .fold(f64::NEG_INFINITY, f64::max);
        if meta.fitness.f_total > best_random {
            wins += 1;
        }
    }
    ensure(wins >= 9, format!("GA won on {wins}/10 graphs"))?;
    ensure(slowest < Duration::from_secs(60), format!("slowest graph took {slowest:?}"))?;
    Ok(format!("GA won on {wins}/10 graphs, slowest {slowest:.2?}"))
}

fn imbalance_benefit() -> Check {
    let start = Instant::now();
    let kind = LayerKind::MeanAgg;
    let mut gains = Vec::new();
    for seed in 0..10u64 {
        let synth = SynthConfig {
            num_nodes: 2000,
            minority_fraction: 0.1,
            class_separation: 0.5,
            seed,
            ..SynthConfig::default()
        };
        let split = split_synth(&synth, 0.2, kind);
        let train_x = FeatureMatrix::new(split.train_x.clone()).unwrap();
        let ga = GaConfig { population_size: 20, generations: 10, seed, ..GaConfig::default() };
        let meta_nodes = ga_sample(&split.train_graph, &train_x, &split.train_labels, &ga, &TreeNormConfig::default(), 0.1)
            .unwrap()
            .nodes;
        let targets = Targets::Classes(split.train_labels.clone());
        let tr = LabeledGraph::new(&split.train_graph, &split.train_x, targets.clone(), kind).unwrap();
        let meta = LabeledGraph::induced(&split.train_graph, &split.train_x, &targets, &meta_nodes, kind).unwrap();
        let base = TrainConfig {
            hidden_dim: 32,
            learning_rate: 0.05,
            meta_learning_rate: 0.05,
            epochs: 200,
            seed,
            ..TrainConfig::default()
        };
        // unweighted training ignores the meta graph entirely
        let plain = TrainConfig { meta_coefficient: 0.0, select_by_meta_loss: false, ..base.clone() };
        let f1_meta = minority_scores(&train(&tr, &meta, 2, &base).unwrap().params, &split).0;
        let f1_plain = minority_scores(&train(&tr, &meta, 2, &plain).unwrap().params, &split).0;
        gains.push(f1_meta - f1_plain);
    }
    let elapsed = start.elapsed();
    let wins = gains.iter().filter(|&&d| d >= 0.0).count();
    let mut sorted = gains.clone();
    sorted.sort_by(f64::total_cmp);
    let median = 0.5 * (sorted[4] + sorted[5]);
    let summary = format!("meta >= plain on {wins}/10 seeds, median F1 gain {median:.3}, {elapsed:.1?}");
    ensure(wins >= 7 && median > 0.0, summary.clone())?;
    ensure(elapsed < Duration::from_secs(300), summary.clone())?;
    Ok(summary)
}

fn metric_oracles() -> Check {
    let mut r = rng(6);
    for case in 0..1000 {
        let len = r.random_range(2..80);
        let scores: Vec<f64> = (0..len).map(|_| f64::from(r.random_range(0..15u8)) / 7.0).collect();
        let labels: Vec<bool> = (0..len).map(|_| r.random()).collect();
        match (auroc(&scores, &labels), auroc_pairs(&scores, &labels)) {
            (Some(a), Some(b)) => ensure((a - b).abs() <= 1e-12, format!("case {case}: {a} vs {b}"))?,
            (None, None) => {}
            other => return Err(format!("case {case}: definedness differs {other:?}")),
        }
    }
    let worked = auroc(&[0.9, 0.2, 0.8, 0.1], &[true, true, false, false]);
    ensure(worked == Some(0.75), format!("worked example gives {worked:?}"))?;
    // TP=2, FP=1, FN=1 for class 1
    let report = classification_report(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0], 2).unwrap();
    let c = report.class("1").unwrap();
    let two_thirds = 2.0 / 3.0;
    ensure(
        c.precision == two_thirds && c.recall == two_thirds && c.f1 == two_thirds,
        format!("hand case gives {c:?}"),
    )?;
    Ok("1000 random cases, 0.75 example, 2/3 hand case".into())
}

fn llr() -> Check {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let t: [u64; 4] = std::array::from_fn(|_| r.random_range(0..1000));
        if t[0] + t[1] == 0 || t[2] + t[3] == 0 {
            continue;
        }
        let err = (llr_statistic(t[0], t[1], t[2], t[3]).unwrap() - llr_oracle(t[0], t[1], t[2], t[3])).abs();
        ensure(err <= 1e-10, format!("table {t:?}: error {err:e}"))?;
        worst = worst.max(err);
    }
    let g = llr_statistic(10, 0, 0, 10).unwrap();
    ensure((g - 40.0 * std::f64::consts::LN_2).abs() <= 1e-10, format!("(10,0,0,10) gives {g}"))?;

    let mut rates = Vec::new();
    for seed in 0..10 {
        let labels: Vec<usize> = (0..400).map(|i| i % 2).collect();
        let text = generate_text(&labels, 0.0, seed).unwrap();
        let class_a: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let stats = count_trigrams(&text.notes, &class_a).unwrap();
        let sel = select_trigrams(&stats, 0.01).unwrap();
        rates.push(sel.len() as f64 / stats.table.len() as f64);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    ensure(mean <= 0.05, format!("same-distribution selection rate {mean:.4}"))?;
    Ok(format!("max error {worst:.1e}, 40 ln 2 exact, false selection rate {:.2}%", 100.0 * mean))
}

fn grace(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_grace"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn write_featurize_inputs(dir: &Path) {
    let n = 80;
    let mut r = rng(8);
    io::write_matrix(&dir.join("base.grmat"), &random_matrix(n, 384, &mut r)).unwrap();
    io::write_matrix(&dir.join("reason.grmat"), &random_matrix(n, 384, &mut r)).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i % 3 == 0)).collect();
    let text = generate_text(&labels, 0.9, 8).unwrap();
    fs::write(dir.join("corpus.tsv"), io::corpus_to_string(&text.notes)).unwrap();
    fs::write(dir.join("labels.csv"), io::class_labels_to_string(&labels)).unwrap();
    let is_test: Vec<bool> = (0..n).map(|i| i % 5 == 0).collect();
    fs::write(dir.join("split.csv"), io::split_to_string(&is_test)).unwrap();
    let vocab = grace_core::text::vocabulary(&text.notes);
    let lexicon: BTreeMap<String, Vec<String>> = (0..194)
        .map(|c| (format!("category{c:03}"), vec![vocab[c % vocab.len()].clone()]))
        .collect();
    fs::write(dir.join("lexicon.json"), serde_json::to_string(&lexicon).unwrap()).unwrap();
}

fn dimension_pinning() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    write_featurize_inputs(dir);
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    grace(&[
        "featurize", "--out", &p("out"), "--task", "t1",
        "--embeddings", &p("base.grmat"), "--reason", &p("reason.grmat"),
        "--corpus", &p("corpus.tsv"), "--lexicon", &p("lexicon.json"),
        "--labels", &p("labels.csv"), "--split", &p("split.csv"),
    ])?;
    let sidecar: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("out/features.json")).unwrap()).unwrap();
    let selected = sidecar["selected_trigrams"]["items"].as_array().map_or(0, Vec::len);
    let total = sidecar["total"].as_u64().unwrap_or(0) as usize;
    let cols = io::read_matrix(&dir.join("out/features.grmat")).unwrap().ncols();
    ensure(selected > 0, "no trigrams selected")?;
    ensure(
        total == 384 + selected + 194 + 384 && cols == total,
        format!("sidecar total {total}, matrix width {cols}, {selected} trigrams"),
    )?;

    let pinned = BlockLayout { base_dim: 384, lex_dim: 723, emo_dim: 194, reason_dim: 384 };
    let sidecar = FeatureSidecar::new(pinned, 0.01, 0, SelectedTrigrams::default());
    let json: serde_json::Value = serde_json::to_value(&sidecar).unwrap();
    ensure(json["total"] == 1685, format!("pinned sidecar total {}", json["total"]))?;
    Ok(format!("384 + {selected} + 194 + 384 = {total}; 723 trigrams give 1685"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .map(|rd| {
            rd.map(|e| e.unwrap().path())
                .filter(|p| p.is_file())
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
                .collect()
        })
        .unwrap_or_default()
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let data = root.join("data").to_string_lossy().into_owned();
    grace(&["synth", "--seed", "9", "--out", &data, "--nodes", "300", "--degree", "20", "--with-text"])?;
    let d = |name: &str| format!("{data}/{name}");
    let inputs: Vec<String> = [
        ("--task", "t1".to_string()),
        ("--embeddings", d("features.grmat")),
        ("--reason", d("reason.grmat")),
        ("--corpus", d("corpus.tsv")),
        ("--lexicon", d("lexicon.json")),
        ("--labels", d("labels.csv")),
        ("--split", d("split.csv")),
        ("--threshold", "0.2".into()),
        ("--generations", "3".into()),
        ("--population", "6".into()),
        ("--epochs", "10".into()),
        ("--hidden", "8".into()),
    ]
    .into_iter()
    .flat_map(|(k, v)| [k.to_string(), v])
    .collect();

    let mut commands = 0;
    for run in ["a", "b"] {
        let out = root.join(run).to_string_lossy().into_owned();
        let o = |name: &str| format!("{out}/{name}");
        let stage = |cmd: &str, extra: &[String]| -> Result<(), String> {
            let mut args = vec![cmd.to_string(), "--seed".into(), "9".into(), "--out".into(), out.clone()];
            args.extend(inputs.iter().cloned());
            args.extend(extra.iter().cloned());
            grace(&args.iter().map(String::as_str).collect::<Vec<_>>())
        };
        grace(&["synth", "--seed", "9", "--out", &o("synth"), "--nodes", "300", "--degree", "20", "--with-text"])?;
        stage("featurize", &[])?;
        let mut extra = vec!["--features".to_string(), o("features.grmat")];
        stage("build-graph", &extra)?;
        extra.extend(["--edges".to_string(), o("edges.tsv")]);
        stage("graph-stats", &extra)?;
        stage("sample-meta", &extra)?;
        extra.extend(["--meta".to_string(), o("meta_graph.json")]);
        stage("train", &extra)?;
        extra.extend(["--model".to_string(), o("model.grm")]);
        stage("eval", &extra)?;
        let whole = root.join(format!("{run}-pipeline")).to_string_lossy().into_owned();
        let mut args = vec!["pipeline".to_string(), "--seed".into(), "9".into(), "--out".into(), whole];
        args.extend(inputs.iter().cloned());
        grace(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
        commands = 8;
    }
    for sub in ["", "synth", "-pipeline"] {
        let (a, b) = if sub.starts_with('-') {
            (root.join(format!("a{sub}")), root.join(format!("b{sub}")))
        } else {
            (root.join("a").join(sub), root.join("b").join(sub))
        };
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        ensure(!sa.is_empty(), format!("{} is empty", a.display()))?;
        ensure(sa == sb, format!("{} and {} differ", a.display(), b.display()))?;
    }

    let features = fs::read(root.join("a/features.grmat")).unwrap();
    let m = io::matrix_from_bytes(&features, Path::new("features.grmat")).map_err(|e| e.to_string())?;
    ensure(io::matrix_to_bytes(&m) == features, "matrix round trip changed bytes")?;
    let model = fs::read(root.join("a/model.grm")).unwrap();
    let params = checkpoint::from_bytes(&model).map_err(|e| e.to_string())?;
    ensure(checkpoint::to_bytes(&params) == model, "checkpoint round trip changed bytes")?;
    Ok(format!("{commands} commands byte-identical across reruns; matrix and checkpoint round trips exact"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradients),
        ("tree-norm oracle", tree_norms),
        ("fitness identity", fitness_identity),
        ("GA superiority", ga_superiority),
        ("imbalance benefit", imbalance_benefit),
        ("metric oracles", metric_oracles),
        ("LLR oracle", llr),
        ("dimension pinning", dimension_pinning),
        ("determinism and persistence", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {id} {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({detail})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
