//! On-disk formats: dense matrices, edge lists, label/split CSVs, token
//! corpora, and atomic file writes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{GraceError, Result};
use crate::graph::Graph;
use crate::text::TokenizedNote;

const MATRIX_MAGIC: &str = "GRMAT1";

fn at(path: &Path, line: usize) -> String {
    format!("{}:{}", path.display(), line)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| GraceError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GraceError::io(path, e))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GraceError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| GraceError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| GraceError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| GraceError::numeric(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| GraceError::input_at(at(path, e.line()), e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `GRMAT1 <rows> <cols>\n` then row-major little-endian f32.
pub fn matrix_to_bytes(m: &Array2<f64>) -> Vec<u8> {
    let header = format!("{MATRIX_MAGIC} {} {}\n", m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(header.len() + 4 * m.len());
    out.extend_from_slice(header.as_bytes());
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Parses the binary format, or comma-separated text when the magic is absent.
pub fn matrix_from_bytes(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    if bytes.starts_with(MATRIX_MAGIC.as_bytes()) {
        binary_matrix(bytes, path)
    } else {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| GraceError::input_at(path.display().to_string(), "neither GRMAT1 nor UTF-8 CSV"))?;
        csv_matrix(text, path)
    }
}

fn binary_matrix(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| GraceError::input_at(at(path, 1), "unterminated matrix header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| GraceError::input_at(at(path, 1), "bad header"))?;
    let parts: Vec<&str> = header.split(' ').collect();
    let dims: Option<(usize, usize)> = match parts.as_slice() {
        [_, r, c] => r.parse().ok().zip(c.parse().ok()),
        _ => None,
    };
    let (rows, cols) = dims.ok_or_else(|| GraceError::input_at(at(path, 1), format!("malformed header '{header}'")))?;
    let body = &bytes[end + 1..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| GraceError::input_at(at(path, 1), "matrix dimensions overflow"))?;
    if body.len() != expected {
        return Err(GraceError::input_at(
            path.display().to_string(),
            format!("{rows}x{cols} matrix needs {expected} data bytes, found {}", body.len()),
        ));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(GraceError::input_at(
            path.display().to_string(),
            format!("non-finite value at row {}, column {}", i / cols.max(1), i % cols.max(1)),
        ));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

fn csv_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| GraceError::input_at(at(path, i + 1), format!("bad number '{field}'")))?;
            if !v.is_finite() {
                return Err(GraceError::input_at(at(path, i + 1), "non-finite value"));
            }
            data.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(GraceError::input_at(at(path, i + 1), format!("expected {c} columns, found {n}")))
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, cols.unwrap_or(0)), data).expect("rectangular"))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    matrix_from_bytes(&read_bytes(path)?, path)
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_atomic(path, &matrix_to_bytes(m))
}

/// `# nodes <n>` then one `u\tv` line per edge with `u < v`, ascending.
pub fn edges_to_string(g: &Graph) -> String {
    let mut out = format!("# nodes {}\n", g.num_nodes());
    for (u, v) in g.edges() {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    out
}

pub fn write_edges(path: &Path, g: &Graph) -> Result<()> {
    write_atomic(path, edges_to_string(g).as_bytes())
}

/// Reads an edge list. The node count comes from the `# nodes` header, or
/// from the largest id when the header is missing.
pub fn read_edges(path: &Path) -> Result<Graph> {
    let text = read_text(path)?;
    let mut declared = None;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(n) = rest.trim().strip_prefix("nodes") {
                declared = Some(
                    n.trim()
                        .parse::<usize>()
                        .map_err(|_| GraceError::input_at(at(path, i + 1), "bad node count"))?,
                );
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let ids: Vec<&str> = line.split(['\t', ' ', ',']).filter(|s| !s.is_empty()).collect();
        let parsed = match ids.as_slice() {
            [u, v] => u.parse::<usize>().ok().zip(v.parse::<usize>().ok()),
            _ => None,
        };
        let (u, v) = parsed.ok_or_else(|| GraceError::input_at(at(path, i + 1), format!("bad edge '{line}'")))?;
        if u == v {
            return Err(GraceError::input_at(at(path, i + 1), format!("self-loop on node {u}")));
        }
        edges.push((u, v));
    }
    let max_id = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
    let n = declared.unwrap_or(max_id);
    if max_id > n {
        return Err(GraceError::input_at(
            path.display().to_string(),
            format!("edge endpoint {} exceeds declared node count {n}", max_id - 1),
        ));
    }
    Graph::from_edges(n, &edges)
}

/// Parses `node_id,value` rows covering exactly nodes `0..n` (a header row is
/// skipped). Returns values indexed by node id.
fn read_node_csv(path: &Path, n: usize) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let mut values: Vec<Option<String>> = vec![None; n];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, value)) = line.split_once(',') else {
            return Err(GraceError::input_at(at(path, i + 1), "expected 'node_id,value'"));
        };
        let Ok(id) = id.trim().parse::<usize>() else {
            if i == 0 {
                continue;
            }
            return Err(GraceError::input_at(at(path, i + 1), format!("bad node id '{id}'")));
        };
        if id >= n {
            return Err(GraceError::input_at(at(path, i + 1), format!("node {id} out of range for {n} nodes")));
        }
        if values[id].replace(value.trim().to_string()).is_some() {
            return Err(GraceError::input_at(at(path, i + 1), format!("duplicate node {id}")));
        }
    }
    if let Some(missing) = values.iter().position(Option::is_none) {
        return Err(GraceError::input_at(path.display().to_string(), format!("node {missing} missing")));
    }
    Ok(values.into_iter().map(|v| v.expect("checked")).collect())
}

/// Counts `node_id,...` data rows, so a label file can define the node set.
pub fn count_csv_nodes(path: &Path) -> Result<usize> {
    let text = read_text(path)?;
    Ok(text
        .lines()
        .filter(|l| l.split_once(',').is_some_and(|(id, _)| id.trim().parse::<usize>().is_ok()))
        .count())
}

pub fn read_class_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    read_node_csv(path, n)?
        .into_iter()
        .enumerate()
        .map(|(id, v)| {
            v.parse()
                .map_err(|_| GraceError::input_at(path.display().to_string(), format!("node {id}: bad class '{v}'")))
        })
        .collect()
}

/// Semicolon-joined label names per node, resolved against `names`.
pub fn read_multilabels(path: &Path, names: &[String], n: usize) -> Result<Vec<Vec<bool>>> {
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    read_node_csv(path, n)?
        .into_iter()
        .enumerate()
        .map(|(id, v)| {
            let mut row = vec![false; names.len()];
            for name in v.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                let &l = index.get(name).ok_or_else(|| {
                    GraceError::input_at(path.display().to_string(), format!("node {id}: unknown label '{name}'"))
                })?;
                row[l] = true;
            }
            Ok(row)
        })
        .collect()
}

pub fn read_label_names(path: &Path) -> Result<Vec<String>> {
    let names: Vec<String> = read_json(path)?;
    let distinct: BTreeSet<&String> = names.iter().collect();
    if distinct.len() != names.len() || names.is_empty() {
        return Err(GraceError::input_at(
            path.display().to_string(),
            "label names must be a non-empty list without duplicates",
        ));
    }
    Ok(names)
}

pub fn class_labels_to_string(labels: &[usize]) -> String {
    let mut out = String::from("node_id,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

/// `true` marks a test node.
pub fn read_split(path: &Path, n: usize) -> Result<Vec<bool>> {
    read_node_csv(path, n)?
        .into_iter()
        .enumerate()
        .map(|(id, v)| match v.as_str() {
            "train" => Ok(false),
            "test" => Ok(true),
            other => Err(GraceError::input_at(
                path.display().to_string(),
                format!("node {id}: split must be train or test, got '{other}'"),
            )),
        })
        .collect()
}

pub fn split_to_string(is_test: &[bool]) -> String {
    let mut out = String::from("node_id,split\n");
    for (i, &t) in is_test.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", if t { "test" } else { "train" }));
    }
    out
}

/// `node_id\ttoken token ...` per line; ids must cover `0..n`.
pub fn read_corpus(path: &Path, n: usize) -> Result<Vec<TokenizedNote>> {
    let text = read_text(path)?;
    let mut notes: Vec<Option<TokenizedNote>> = vec![None; n];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').unwrap_or((line, ""));
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| GraceError::input_at(at(path, i + 1), format!("bad node id '{id}'")))?;
        if id >= n {
            return Err(GraceError::input_at(at(path, i + 1), format!("node {id} out of range for {n} nodes")));
        }
        if notes[id].replace(TokenizedNote::from_text(id, body)).is_some() {
            return Err(GraceError::input_at(at(path, i + 1), format!("duplicate node {id}")));
        }
    }
    notes
        .into_iter()
        .enumerate()
        .map(|(id, n)| n.ok_or_else(|| GraceError::input_at(path.display().to_string(), format!("node {id} missing"))))
        .collect()
}

pub fn corpus_to_string(notes: &[TokenizedNote]) -> String {
    let mut out = String::new();
    for note in notes {
        out.push_str(&format!("{}\t{}\n", note.node_id, note.tokens.join(" ")));
    }
    out
}
