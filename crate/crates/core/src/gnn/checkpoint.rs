//! Binary model checkpoints: `GRMODEL1`, layer-kind tag, three dims as u64,
//! task tag, then every parameter block as little-endian f64.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::params::{LayerKind, ModelDims, ModelParams, TaskMode};
use crate::error::{GraceError, Result};

const MAGIC: &[u8; 8] = b"GRMODEL1";

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 1 + 24 + 1 + 8 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.push(params.kind.tag());
    for d in [params.dims.input_dim, params.dims.hidden_dim, params.dims.num_outputs] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(params.task.tag());
    for b in params.blocks() {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(GraceError::input_at(
                format!("byte {}", self.pos),
                "checkpoint truncated",
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(GraceError::input("not a model checkpoint (bad magic)"));
    }
    let kind_tag = c.u8()?;
    let kind = LayerKind::from_tag(kind_tag)
        .ok_or_else(|| GraceError::input(format!("unknown layer kind tag {kind_tag}")))?;
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = usize::try_from(c.u64()?).map_err(|_| GraceError::input("checkpoint dimension too large"))?;
    }
    let task_tag = c.u8()?;
    let task = TaskMode::from_tag(task_tag)
        .ok_or_else(|| GraceError::input(format!("unknown task tag {task_tag}")))?;
    let dims = ModelDims {
        input_dim: dims[0],
        hidden_dim: dims[1],
        num_outputs: dims[2],
    };
    let mut params = skeleton(dims, kind, task)?;
    let expected = 8 * params.num_parameters();
    if bytes.len() - c.pos != expected {
        return Err(GraceError::input(format!(
            "checkpoint body has {} bytes, expected {expected}",
            bytes.len() - c.pos
        )));
    }
    for block in params.blocks_mut() {
        for v in block.iter_mut() {
            *v = f64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));
        }
    }
    if !params.is_finite() {
        return Err(GraceError::input("checkpoint contains non-finite parameters"));
    }
    Ok(params)
}

/// Zero-filled parameters of the right shapes.
fn skeleton(dims: ModelDims, kind: LayerKind, task: TaskMode) -> Result<ModelParams> {
    if dims.input_dim == 0 || dims.hidden_dim == 0 || dims.num_outputs == 0 {
        return Err(GraceError::input(format!("checkpoint has zero dimension: {dims:?}")));
    }
    // guard against absurd headers before allocating
    let h = dims.hidden_dim as u128;
    let count = dims.input_dim as u128 * h + 2 * (2 * h * h + h) + h * dims.num_outputs as u128;
    if count > (1 << 32) {
        return Err(GraceError::input("checkpoint dimensions implausibly large"));
    }
    let layer = || super::params::GraphLayerParams {
        w_self: Array2::zeros((dims.hidden_dim, dims.hidden_dim)),
        w_neigh: (kind == LayerKind::MeanAgg).then(|| Array2::zeros((dims.hidden_dim, dims.hidden_dim))),
        bias: (kind == LayerKind::MeanAgg).then(|| Array1::zeros(dims.hidden_dim)),
    };
    Ok(ModelParams {
        kind,
        task,
        dims,
        w_in: Array2::zeros((dims.input_dim, dims.hidden_dim)),
        b_in: Array1::zeros(dims.hidden_dim),
        layers: [layer(), layer()],
        w_out: Array2::zeros((dims.hidden_dim, dims.num_outputs)),
        b_out: Array1::zeros(dims.num_outputs),
    })
}

pub fn write<W: Write>(params: &ModelParams, mut w: W) -> std::io::Result<()> {
    w.write_all(&to_bytes(params))
}

pub fn read<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| GraceError::input(format!("reading checkpoint: {e}")))?;
    from_bytes(&bytes)
}
