use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};

/// Message-passing layer flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    /// `relu(H W_self + mean_{u in N(v)} H_u W_neigh + b)`
    MeanAgg,
    /// `relu(D^-1/2 (A + I) D^-1/2 H W)`
    NormAdj,
}

impl LayerKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            LayerKind::MeanAgg => 0,
            LayerKind::NormAdj => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LayerKind::MeanAgg),
            1 => Some(LayerKind::NormAdj),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    /// Log-softmax over classes, negative log-likelihood loss.
    BinarySoftmax,
    /// Independent per-label logits, binary cross-entropy loss.
    MultilabelSigmoid,
}

impl TaskMode {
    pub(crate) fn tag(self) -> u8 {
        match self {
            TaskMode::BinarySoftmax => 0,
            TaskMode::MultilabelSigmoid => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(TaskMode::BinarySoftmax),
            1 => Some(TaskMode::MultilabelSigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphLayerParams {
    pub w_self: Array2<f64>,
    /// Mean-aggregation only.
    pub w_neigh: Option<Array2<f64>>,
    /// Mean-aggregation only.
    pub bias: Option<Array1<f64>>,
}

/// Input projection, two graph layers and the output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: LayerKind,
    pub task: TaskMode,
    pub dims: ModelDims,
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub layers: [GraphLayerParams; 2],
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

pub const NUM_GRAPH_LAYERS: usize = 2;

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

impl ModelParams {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init(dims: ModelDims, kind: LayerKind, task: TaskMode, seed: u64) -> Result<Self> {
        if dims.input_dim == 0 || dims.hidden_dim == 0 || dims.num_outputs == 0 {
            return Err(GraceError::config(format!("model dims must be positive: {dims:?}")));
        }
        if task == TaskMode::BinarySoftmax && dims.num_outputs < 2 {
            return Err(GraceError::config("softmax head needs at least two outputs"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = dims.hidden_dim;
        let w_in = uniform_matrix(dims.input_dim, h, &mut rng);
        let b_in = Array1::zeros(h);
        let layer = |rng: &mut ChaCha8Rng| match kind {
            LayerKind::MeanAgg => GraphLayerParams {
                w_self: uniform_matrix(h, h, rng),
                w_neigh: Some(uniform_matrix(h, h, rng)),
                bias: Some(Array1::zeros(h)),
            },
            LayerKind::NormAdj => GraphLayerParams {
                w_self: uniform_matrix(h, h, rng),
                w_neigh: None,
                bias: None,
            },
        };
        let layers = [layer(&mut rng), layer(&mut rng)];
        let w_out = uniform_matrix(h, dims.num_outputs, &mut rng);
        let b_out = Array1::zeros(dims.num_outputs);
        Ok(ModelParams {
            kind,
            task,
            dims,
            w_in,
            b_in,
            layers,
            w_out,
            b_out,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.blocks_mut().into_iter().for_each(|b| b.fill(0.0));
        z
    }

    /// Parameter blocks in declaration order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![slice(&self.w_in), slice1(&self.b_in)];
        for l in &self.layers {
            out.push(slice(&l.w_self));
            if let Some(w) = &l.w_neigh {
                out.push(slice(w));
            }
            if let Some(b) = &l.bias {
                out.push(slice1(b));
            }
        }
        out.push(slice(&self.w_out));
        out.push(slice1(&self.b_out));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.w_in.as_slice_mut().expect("standard layout"),
            self.b_in.as_slice_mut().expect("standard layout"),
        ];
        for l in self.layers.iter_mut() {
            out.push(l.w_self.as_slice_mut().expect("standard layout"));
            if let Some(w) = l.w_neigh.as_mut() {
                out.push(w.as_slice_mut().expect("standard layout"));
            }
            if let Some(b) = l.bias.as_mut() {
                out.push(b.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.w_out.as_slice_mut().expect("standard layout"));
        out.push(self.b_out.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for b in self.blocks_mut() {
            b.copy_from_slice(&flat[offset..offset + b.len()]);
            offset += b.len();
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }

    pub fn dot(&self, other: &ModelParams) -> f64 {
        self.blocks()
            .into_iter()
            .zip(other.blocks())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}
