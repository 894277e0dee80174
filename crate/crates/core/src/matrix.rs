//! Dense row-per-node feature matrices and their block layout.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};

/// Widths of the concatenated feature blocks, in storage order
/// base | lexical | emotive | reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BlockLayout {
    pub base_dim: usize,
    pub lex_dim: usize,
    pub emo_dim: usize,
    pub reason_dim: usize,
}

impl BlockLayout {
    /// Layout for a matrix that is a single undifferentiated block.
    pub fn plain(dim: usize) -> Self {
        BlockLayout {
            base_dim: dim,
            ..Default::default()
        }
    }

    pub fn total(&self) -> usize {
        self.base_dim + self.lex_dim + self.emo_dim + self.reason_dim
    }

    /// Column ranges of the four blocks.
    pub fn ranges(&self) -> [std::ops::Range<usize>; 4] {
        let a = self.base_dim;
        let b = a + self.lex_dim;
        let c = b + self.emo_dim;
        let d = c + self.reason_dim;
        [0..a, a..b, b..c, c..d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    layout: BlockLayout,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let layout = BlockLayout::plain(data.ncols());
        Self::with_layout(data, layout)
    }

    pub fn with_layout(data: Array2<f64>, layout: BlockLayout) -> Result<Self> {
        if layout.total() != data.ncols() {
            return Err(GraceError::input(format!(
                "layout totals {} columns but matrix has {}",
                layout.total(),
                data.ncols()
            )));
        }
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let cols = data.ncols().max(1);
            return Err(GraceError::input_at(
                format!("row {}, column {}", idx / cols, idx % cols),
                "non-finite feature value",
            ));
        }
        Ok(FeatureMatrix { data, layout })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(GraceError::input_at(
                format!("row {i}"),
                format!("expected {dim} columns, found {}", rows[i].len()),
            ));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| GraceError::input(e.to_string()))?;
        Self::new(data)
    }

    pub fn num_nodes(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// Rows `idx` in the given order, keeping the layout.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.num_nodes()) {
            return Err(GraceError::input(format!(
                "row {bad} out of range for a matrix with {} rows",
                self.num_nodes()
            )));
        }
        Ok(FeatureMatrix {
            data: self.data.select(Axis(0), idx),
            layout: self.layout,
        })
    }

    /// Sum over columns of the population variance of each column.
    pub fn total_variance(&self) -> f64 {
        total_variance_of_rows(self, None)
    }
}

/// Sum of per-column population variances over the selected rows (all rows
/// when `rows` is `None`).
pub fn total_variance_of_rows(x: &FeatureMatrix, rows: Option<&[usize]>) -> f64 {
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..x.num_nodes()).collect();
            &all
        }
    };
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.len() as f64;
    let d = x.dim();
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.data.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut total = 0.0;
    for &r in rows {
        for (m, v) in mean.iter().zip(x.data.row(r)) {
            let c = v - m;
            total += c * c;
        }
    }
    total / n
}
