//! Occupancy grid data model, coordinate transforms and the OCC1 file format.
//!
//! Voxel `(x, y, z)` covers the world box
//! `[x·mpp, (x+1)·mpp] × [y·mpp, (y+1)·mpp] × [floor_z + z·dz, floor_z + (z+1)·dz]`
//! with `dz = room_height / n_vertical`, and its value lives at the box
//! center. `x` runs along top-down image columns, `y` along rows (row 0 has
//! the smallest `y`), `z` points up.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const OCC_MAGIC: &[u8; 8] = b"OCCGRID1";
const HEADER_LEN: usize = 8 + 3 * 4 + 3 * 8;

/// Physical scale binding image pixels and voxel layers to meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub meters_per_pixel: f64,
    pub room_height: f64,
    #[serde(default)]
    pub floor_z: f64,
}

impl SceneMeta {
    pub fn new(meters_per_pixel: f64, room_height: f64) -> Result<Self> {
        let meta = Self {
            meters_per_pixel,
            room_height,
            floor_z: 0.0,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn with_floor_z(mut self, floor_z: f64) -> Self {
        self.floor_z = floor_z;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.meters_per_pixel.is_finite() && self.meters_per_pixel > 0.0) {
            return Err(Error::invalid(format!(
                "meters_per_pixel must be positive, got {}",
                self.meters_per_pixel
            )));
        }
        if !(self.room_height.is_finite() && self.room_height > 0.0) {
            return Err(Error::invalid(format!(
                "room_height must be positive, got {}",
                self.room_height
            )));
        }
        if !self.floor_z.is_finite() {
            return Err(Error::invalid("floor_z must be finite"));
        }
        Ok(())
    }
}

/// A point in the right-handed, z-up world frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// `self + t·dir`
    #[inline]
    pub fn offset(&self, dir: [f64; 3], t: f64) -> Self {
        Self::new(self.x + t * dir[0], self.y + t * dir[1], self.z + t * dir[2])
    }
}

/// Dense occupancy field with values in `[0, 1]`.
///
/// Immutable once built; reinforcement passes return new grids.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height_px: usize,
    n_vertical: usize,
    values: Vec<f32>,
    meta: SceneMeta,
}

impl OccupancyGrid {
    /// Builds a grid from values laid out z-fastest:
    /// `index = (y·width + x)·n_vertical + z`.
    pub fn new(
        width: usize,
        height_px: usize,
        n_vertical: usize,
        values: Vec<f32>,
        meta: SceneMeta,
    ) -> Result<Self> {
        if width == 0 || height_px == 0 || n_vertical == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be >= 1, got {width}x{height_px}x{n_vertical}"
            )));
        }
        meta.validate()?;
        let expected = width
            .checked_mul(height_px)
            .and_then(|v| v.checked_mul(n_vertical))
            .ok_or_else(|| Error::invalid("grid dimensions overflow"))?;
        if values.len() != expected {
            return Err(Error::mismatch(format!(
                "{width}x{height_px}x{n_vertical} grid needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::ValueOutOfRange {
                index,
                value: value as f64,
            });
        }
        Ok(Self {
            width,
            height_px,
            n_vertical,
            values,
            meta,
        })
    }

    pub fn zeros(width: usize, height_px: usize, n_vertical: usize, meta: SceneMeta) -> Result<Self> {
        Self::filled(width, height_px, n_vertical, 0.0, meta)
    }

    pub fn filled(
        width: usize,
        height_px: usize,
        n_vertical: usize,
        value: f32,
        meta: SceneMeta,
    ) -> Result<Self> {
        let len = width
            .checked_mul(height_px)
            .and_then(|v| v.checked_mul(n_vertical))
            .ok_or_else(|| Error::invalid("grid dimensions overflow"))?;
        Self::new(width, height_px, n_vertical, vec![value; len], meta)
    }

    /// Builds a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        width: usize,
        height_px: usize,
        n_vertical: usize,
        meta: SceneMeta,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height_px * n_vertical);
        for y in 0..height_px {
            for x in 0..width {
                for z in 0..n_vertical {
                    values.push(f(x, y, z));
                }
            }
        }
        Self::new(width, height_px, n_vertical, values, meta)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height_px(&self) -> usize {
        self.height_px
    }

    pub fn n_vertical(&self) -> usize {
        self.n_vertical
    }

    pub fn meta(&self) -> &SceneMeta {
        &self.meta
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn voxel_z_size(&self) -> f64 {
        self.meta.room_height / self.n_vertical as f64
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (y * self.width + x) * self.n_vertical + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    /// World-space center of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> WorldPoint {
        let mpp = self.meta.meters_per_pixel;
        WorldPoint::new(
            (x as f64 + 0.5) * mpp,
            (y as f64 + 0.5) * mpp,
            self.meta.floor_z + (z as f64 + 0.5) * self.voxel_z_size(),
        )
    }

    /// Horizontal extent of the grid in meters, `(x_max, y_max)`.
    pub fn footprint(&self) -> (f64, f64) {
        (
            self.width as f64 * self.meta.meters_per_pixel,
            self.height_px as f64 * self.meta.meters_per_pixel,
        )
    }

    /// Maps a world point to continuous voxel coordinates. Voxel `i` spans
    /// `[i, i+1)` along each axis. No clamping.
    #[inline]
    pub fn world_to_voxel(&self, p: WorldPoint) -> [f64; 3] {
        let mpp = self.meta.meters_per_pixel;
        [
            p.x / mpp,
            p.y / mpp,
            (p.z - self.meta.floor_z) / self.voxel_z_size(),
        ]
    }

    /// Trilinear occupancy at a world point; 0 outside the grid box.
    #[inline]
    pub fn sample_occupancy(&self, p: WorldPoint) -> f64 {
        let [vx, vy, vz] = self.world_to_voxel(p);
        self.sample_voxel(vx, vy, vz)
    }

    /// Trilinear interpolation between voxel centers at continuous voxel
    /// coordinates. Inside the box but beyond the outermost centers the edge
    /// value is held; outside the box the result is 0.
    #[inline]
    pub fn sample_voxel(&self, vx: f64, vy: f64, vz: f64) -> f64 {
        let w = self.width as f64;
        let h = self.height_px as f64;
        let n = self.n_vertical as f64;
        // Negated comparisons so NaN also lands outside.
        if !(vx >= 0.0 && vx <= w && vy >= 0.0 && vy <= h && vz >= 0.0 && vz <= n) {
            return 0.0;
        }
        let (x0, x1, tx) = axis_neighbors(vx, self.width);
        let (y0, y1, ty) = axis_neighbors(vy, self.height_px);
        let (z0, z1, tz) = axis_neighbors(vz, self.n_vertical);

        let nz = self.n_vertical;
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        let v = &self.values;
        let at = |row: usize, x: usize, z: usize| v[(row + x) * nz + z] as f64;

        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(at(row0, x0, z0), at(row0, x0, z1), tz);
        let c01 = lerp(at(row0, x1, z0), at(row0, x1, z1), tz);
        let c10 = lerp(at(row1, x0, z0), at(row1, x0, z1), tz);
        let c11 = lerp(at(row1, x1, z0), at(row1, x1, z1), tz);
        let c0 = lerp(c00, c01, tx);
        let c1 = lerp(c10, c11, tx);
        lerp(c0, c1, ty)
    }

    /// Returns a copy with `f` applied to every value; results are clamped to
    /// `[0, 1]`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, usize, f32) -> f32) -> Self {
        let mut out = self.clone();
        for y in 0..self.height_px {
            for x in 0..self.width {
                for z in 0..self.n_vertical {
                    let i = self.index(x, y, z);
                    out.values[i] = f(x, y, z, self.values[i]).clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    /// Serializes into the OCC1 byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(OCC_MAGIC);
        for dim in [self.width, self.height_px, self.n_vertical] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in [
            self.meta.meters_per_pixel,
            self.meta.room_height,
            self.meta.floor_z,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an OCC1 byte buffer.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != OCC_MAGIC {
            return Err(Error::Format("missing OCCGRID1 magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (width, height_px, n_vertical) = (u32_at(8), u32_at(12), u32_at(16));
        let meta = SceneMeta {
            meters_per_pixel: f64_at(20),
            room_height: f64_at(28),
            floor_z: f64_at(36),
        };

        let count = width
            .checked_mul(height_px)
            .and_then(|v| v.checked_mul(n_vertical))
            .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
        let expected = count
            .checked_mul(4)
            .and_then(|v| v.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(width, height_px, n_vertical, values, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Hex SHA-256 of the OCC1 serialization.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// Lower/upper neighbor indices and blend weight along one axis, holding the
/// edge value past the outermost centers.
#[inline]
fn axis_neighbors(v: f64, len: usize) -> (usize, usize, f64) {
    let f = v - 0.5;
    let base = f.floor();
    let t = f - base;
    let last = (len - 1) as isize;
    let i0 = base as isize;
    let lo = i0.clamp(0, last) as usize;
    let hi = (i0 + 1).clamp(0, last) as usize;
    (lo, hi, t)
}
