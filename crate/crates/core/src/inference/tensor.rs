//! `WLT1` tensor files and typed head tensors.
//!
//! Layout: the magic `WLT1`, a little-endian `u32` rank, `rank` little-endian
//! `u32` dims, then the row-major little-endian `f32` payload.

use std::path::Path;

use super::config::{HeadConfig, ModelConfig};
use super::InferenceError;

pub const WLT_MAGIC: &[u8; 4] = b"WLT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self, InferenceError> {
        match element_count(&dims) {
            Some(n) if n == data.len() => Ok(Tensor { dims, data }),
            _ => Err(InferenceError::Tensor(format!(
                "dims {dims:?} do not match {} values",
                data.len()
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(WLT_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InferenceError> {
        let err = |m: &str| InferenceError::Tensor(m.to_string());
        if bytes.len() < 8 {
            return Err(err("truncated header"));
        }
        if &bytes[..4] != WLT_MAGIC {
            return Err(err("bad magic, expected WLT1"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let rank = word(4) as usize;
        let header = rank
            .checked_mul(4)
            .and_then(|n| n.checked_add(8))
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| err("truncated dims"))?;
        let dims: Vec<u32> = (0..rank).map(|k| word(8 + 4 * k)).collect();
        let count = element_count(&dims).ok_or_else(|| err("dims overflow"))?;
        let payload = &bytes[header..];
        if count.checked_mul(4) != Some(payload.len()) {
            return Err(InferenceError::Tensor(format!(
                "payload has {} bytes, dims {dims:?} need {}",
                payload.len(),
                count.saturating_mul(4)
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self, InferenceError> {
        let bytes = std::fs::read(path).map_err(|e| InferenceError::io(path, e))?;
        Tensor::from_bytes(&bytes)
            .map_err(|e| InferenceError::Tensor(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), InferenceError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| InferenceError::io(path, e))
    }
}

/// Raw output of one detection head, shaped
/// `[grid_h][grid_w][anchors][5 + classes]` with channels
/// `tx, ty, tw, th, objectness, class logits...`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor {
    pub stride: u32,
    pub grid_h: u32,
    pub grid_w: u32,
    pub anchors: Vec<[f32; 2]>,
    pub num_classes: usize,
    pub values: Vec<f32>,
}

impl HeadTensor {
    /// A head filled with `fill` at the geometry of `head` under `cfg`.
    pub fn filled(cfg: &ModelConfig, head: &HeadConfig, fill: f32) -> Self {
        let (grid_h, grid_w) = (cfg.net_h / head.stride, cfg.net_w / head.stride);
        let len = grid_h as usize * grid_w as usize * head.anchors.len() * (5 + cfg.num_classes);
        HeadTensor {
            stride: head.stride,
            grid_h,
            grid_w,
            anchors: head.anchors.clone(),
            num_classes: cfg.num_classes,
            values: vec![fill; len],
        }
    }

    pub fn channels(&self) -> usize {
        5 + self.num_classes
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn dims(&self) -> [u32; 4] {
        [
            self.grid_h,
            self.grid_w,
            self.anchors.len() as u32,
            self.channels() as u32,
        ]
    }

    #[inline]
    pub fn offset(&self, row: u32, col: u32, anchor: usize) -> usize {
        ((row as usize * self.grid_w as usize + col as usize) * self.num_anchors() + anchor)
            * self.channels()
    }

    pub fn cell(&self, row: u32, col: u32, anchor: usize) -> &[f32] {
        let o = self.offset(row, col, anchor);
        &self.values[o..o + self.channels()]
    }

    pub fn cell_mut(&mut self, row: u32, col: u32, anchor: usize) -> &mut [f32] {
        let o = self.offset(row, col, anchor);
        let c = self.channels();
        &mut self.values[o..o + c]
    }

    /// Wraps a rank-4 tensor, checking it against the head geometry.
    pub fn from_tensor(
        tensor: Tensor,
        cfg: &ModelConfig,
        head: &HeadConfig,
    ) -> Result<Self, InferenceError> {
        let expected = vec![
            cfg.net_h / head.stride,
            cfg.net_w / head.stride,
            head.anchors.len() as u32,
            5 + cfg.num_classes as u32,
        ];
        if tensor.dims != expected {
            return Err(InferenceError::DimMismatch {
                expected,
                actual: tensor.dims,
            });
        }
        Ok(HeadTensor {
            stride: head.stride,
            grid_h: expected[0],
            grid_w: expected[1],
            anchors: head.anchors.clone(),
            num_classes: cfg.num_classes,
            values: tensor.data,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: self.dims().to_vec(),
            data: self.values.clone(),
        }
    }
}
