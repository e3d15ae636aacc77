//! Low-rank adapters for square linear layers.
//!
//! A frozen `d×d` weight `W0` is adapted by `ΔW = B·A` with `A: r×d` and
//! `B: d×r`, and the forward pass becomes `W0·h + α·B·(A·h)`. Factor
//! weights are stored as `f32`; arithmetic runs in `f64`.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const LORA_MAGIC: &[u8; 8] = b"LORA0001";
pub const DEFAULT_RANK: usize = 8;
const HEADER_LEN: usize = 8 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// Down projection, `r×d`.
    a: DMatrix<f32>,
    /// Up projection, `d×r`.
    b: DMatrix<f32>,
    alpha: f64,
}

impl LoraAdapter {
    pub fn new(a: DMatrix<f32>, b: DMatrix<f32>, alpha: f64) -> Result<Self> {
        let (r, d) = a.shape();
        if r == 0 || d == 0 {
            return Err(Error::invalid("adapter rank and dimension must be >= 1"));
        }
        if b.shape() != (d, r) {
            return Err(Error::mismatch(format!(
                "A is {r}x{d}, so B must be {d}x{r}, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        if r >= d {
            log::warn!("adapter rank {r} is not below layer dimension {d}; no parameter savings");
        }
        Ok(Self { a, b, alpha })
    }

    /// Adapter with both factors zero: an exact no-op.
    pub fn zeros(dim: usize, rank: usize, alpha: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(rank, dim), DMatrix::zeros(dim, rank), alpha)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a(&self) -> &DMatrix<f32> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f32> {
        &self.b
    }

    /// Trainable parameter count, `2·d·r`.
    pub fn param_count(&self) -> usize {
        2 * self.dim() * self.rank()
    }

    fn check_base(&self, w0: &DMatrix<f64>) -> Result<()> {
        let d = self.dim();
        if w0.shape() != (d, d) {
            return Err(Error::mismatch(format!(
                "base weight must be {d}x{d}, got {}x{}",
                w0.nrows(),
                w0.ncols()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (d, r) = (self.dim(), self.rank());
        let mut out = Vec::with_capacity(HEADER_LEN + 2 * d * r * 4);
        out.extend_from_slice(LORA_MAGIC);
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        for m in [&self.a, &self.b] {
            for row in m.row_iter() {
                for v in row.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != LORA_MAGIC {
            return Err(Error::Format("missing LORA0001 magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let r = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let alpha = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let expected = d
            .checked_mul(r)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format("adapter dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        let mut floats = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let a = DMatrix::from_row_iterator(r, d, floats.by_ref().take(r * d));
        let b = DMatrix::from_row_iterator(d, r, floats);
        Self::new(a, b, alpha)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// `W0·h + α·B·(A·h)` for a `d×n` batch of column vectors. `ΔW` is never
/// formed; the update costs two rank-`r` products.
pub fn lora_forward(
    w0: &DMatrix<f64>,
    adapter: &LoraAdapter,
    h: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    adapter.check_base(w0)?;
    if h.nrows() != adapter.dim() {
        return Err(Error::mismatch(format!(
            "input has {} rows, layer dimension is {}",
            h.nrows(),
            adapter.dim()
        )));
    }
    let a = adapter.a.map(f64::from);
    let b = adapter.b.map(f64::from);
    let down = a * h;
    let up = b * down;
    Ok(w0 * h + up * adapter.alpha)
}

/// Folds the adapter into the base weight: `W0 + α·B·A`.
pub fn merge(w0: &DMatrix<f64>, adapter: &LoraAdapter) -> Result<DMatrix<f64>> {
    adapter.check_base(w0)?;
    let delta = adapter.b.map(f64::from) * adapter.a.map(f64::from);
    Ok(w0 + delta * adapter.alpha)
}

/// Fraction of new parameters an adapter of rank `r` adds to one square
/// `d×d` layer: `2·r/d`.
pub fn param_ratio(d: usize, r: usize) -> f64 {
    (2 * d * r) as f64 / (d * d) as f64
}
