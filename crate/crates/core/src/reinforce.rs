//! Structural reinforcement of walls and floor, plus an analytic box-room
//! builder used to produce scenes with known geometry.

use std::path::Path;

use image::ImageFormat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{OccupancyGrid, SceneMeta, WorldPoint};
use crate::image::{encode_png, ColorImage};

// Absorbs float noise when snapping meter extents to voxel centers.
const SNAP_EPS: f64 = 1e-9;

/// Top-down wall raster, `true` where a pixel is wall. Row-major, `height`
/// rows of `width` columns, matching the grid footprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WallMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl WallMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::mismatch(format!(
                "{width}x{height} mask needs {} cells, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, wall: bool) {
        self.data[y * self.width + x] = wall;
    }

    /// Decodes a PNG; any nonzero luma marks a wall pixel.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let luma = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma16();
        let data = luma.pixels().map(|p| p.0[0] != 0).collect();
        Self::new(luma.width() as usize, luma.height() as usize, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }

    /// 8-bit grayscale PNG, 255 on walls.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let px = self.data.iter().map(|&w| if w { 255u8 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, px)
            .expect("buffer sized to mask");
        encode_png(image::DynamicImage::ImageLuma8(img))
    }
}

/// Sets every vertical voxel under a masked pixel to full occupancy.
pub fn reinforce_walls(grid: &OccupancyGrid, mask: &WallMask) -> Result<OccupancyGrid> {
    if mask.width != grid.width() || mask.height != grid.height_px() {
        return Err(Error::mismatch(format!(
            "wall mask is {}x{}, grid footprint is {}x{}",
            mask.width,
            mask.height,
            grid.width(),
            grid.height_px()
        )));
    }
    let mut out = grid.clone();
    let n = grid.n_vertical();
    let values = out.values_mut();
    for (column, _) in mask.data.iter().enumerate().filter(|(_, &wall)| wall) {
        values[column * n..(column + 1) * n].fill(1.0);
    }
    Ok(out)
}

/// Sets the bottom voxel layer to full occupancy across the footprint.
pub fn reinforce_floor(grid: &OccupancyGrid) -> OccupancyGrid {
    let mut out = grid.clone();
    let n = grid.n_vertical();
    for column in out.values_mut().chunks_exact_mut(n) {
        column[0] = 1.0;
    }
    out
}

/// JSON description of a rectangular room. Extents are the outer wall
/// boundary in meters; walls are laid inward from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRoomSpec {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub wall_thickness: f64,
    pub room_height: f64,
    #[serde(default)]
    pub floor_z: f64,
    #[serde(default)]
    pub furniture: Vec<FurnitureBox>,
}

/// An axis-aligned block standing on the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FurnitureBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub height: f64,
    #[serde(default = "full_occupancy")]
    pub occupancy: f32,
}

fn full_occupancy() -> f32 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Entry distance of a ray into the box, if it hits at `t >= 0`.
    pub fn ray_entry(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let mut t_near = 0.0f64;
        let mut t_far = f64::INFINITY;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (a, b) = (
                (self.min[k] - origin[k]) * inv,
                (self.max[k] - origin[k]) * inv,
            );
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t_near = t_near.max(lo);
            t_far = t_far.min(hi);
            if t_near > t_far {
                return None;
            }
        }
        Some(t_near)
    }
}

/// Exact world-space geometry of a rasterized box room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRoomGeometry {
    /// Free interior: inner wall faces in x/y, top of the floor layer to the
    /// top of the walls in z.
    pub interior: Aabb,
    /// Outer wall boundary after rasterization.
    pub outer: Aabb,
    pub furniture: Vec<FurnitureGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FurnitureGeometry {
    pub bounds: Aabb,
    pub occupancy: f32,
}

impl BoxRoomGeometry {
    /// Closed-form distance to the first opaque surface along a ray starting
    /// inside the room, capped at `max_range`. Furniture with occupancy below
    /// `solid_threshold` is treated as transparent.
    pub fn analytic_depth(
        &self,
        origin: WorldPoint,
        dir: [f64; 3],
        max_range: f64,
        solid_threshold: f32,
    ) -> f64 {
        let o = [origin.x, origin.y, origin.z];
        let inner = &self.interior;
        let mut best = f64::INFINITY;

        if dir[2] < 0.0 {
            best = best.min((inner.min[2] - o[2]) / dir[2]);
        }
        let mut wall_t = f64::INFINITY;
        for k in 0..2 {
            if dir[k] > 0.0 {
                wall_t = wall_t.min((inner.max[k] - o[k]) / dir[k]);
            } else if dir[k] < 0.0 {
                wall_t = wall_t.min((inner.min[k] - o[k]) / dir[k]);
            }
        }
        if wall_t.is_finite() && o[2] + wall_t * dir[2] <= inner.max[2] {
            best = best.min(wall_t);
        }
        for f in &self.furniture {
            if f.occupancy >= solid_threshold {
                if let Some(t) = f.bounds.ray_entry(o, dir) {
                    best = best.min(t);
                }
            }
        }
        best.min(max_range)
    }
}

/// Inclusive voxel index range whose centers fall inside `[lo, hi]` meters.
fn center_range(lo: f64, hi: f64, voxel: f64) -> Option<(usize, usize)> {
    let first = (lo / voxel - 0.5 - SNAP_EPS).ceil().max(0.0);
    let last = (hi / voxel - 0.5 + SNAP_EPS).floor();
    (last >= first).then_some((first as usize, last as usize))
}

fn ensure_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("box room extents must be finite"))
    }
}

/// Rasterizes a box room: perimeter walls and the floor layer at 1, furniture
/// blocks at their occupancy, everything else empty.
pub fn build_box_room(
    spec: &BoxRoomSpec,
    meters_per_pixel: f64,
    n_vertical: usize,
) -> Result<(OccupancyGrid, BoxRoomGeometry)> {
    ensure_finite(&[spec.x0, spec.x1, spec.y0, spec.y1, spec.wall_thickness])?;
    if spec.x1 <= spec.x0 || spec.y1 <= spec.y0 {
        return Err(Error::invalid("room extents must satisfy x1 > x0 and y1 > y0"));
    }
    if spec.x0 < 0.0 || spec.y0 < 0.0 {
        return Err(Error::invalid("room extents must be nonnegative"));
    }
    if spec.wall_thickness < 0.0 {
        return Err(Error::invalid("wall thickness must be nonnegative"));
    }
    if n_vertical == 0 {
        return Err(Error::invalid("n_vertical must be >= 1"));
    }
    let meta = SceneMeta::new(meters_per_pixel, spec.room_height)?.with_floor_z(spec.floor_z);
    meta.validate()?;
    let mpp = meters_per_pixel;
    let dz = spec.room_height / n_vertical as f64;

    let (xa, xb) = center_range(spec.x0, spec.x1, mpp)
        .ok_or_else(|| Error::invalid("room is narrower than one voxel in x"))?;
    let (ya, yb) = center_range(spec.y0, spec.y1, mpp)
        .ok_or_else(|| Error::invalid("room is narrower than one voxel in y"))?;
    let wall = ((spec.wall_thickness / mpp).round() as usize).max(1);
    if xa + 2 * wall > xb + 1 || ya + 2 * wall > yb + 1 {
        return Err(Error::invalid(
            "walls leave no interior at this resolution",
        ));
    }
    // Interior voxel index ranges, half-open.
    let (ix0, ix1) = (xa + wall, xb + 1 - wall);
    let (iy0, iy1) = (ya + wall, yb + 1 - wall);
    let width = xb + 1;
    let height = yb + 1;

    let interior = Aabb {
        min: [ix0 as f64 * mpp, iy0 as f64 * mpp, spec.floor_z + dz],
        max: [ix1 as f64 * mpp, iy1 as f64 * mpp, spec.floor_z + spec.room_height],
    };
    let outer = Aabb {
        min: [xa as f64 * mpp, ya as f64 * mpp, spec.floor_z],
        max: [(xb + 1) as f64 * mpp, (yb + 1) as f64 * mpp, spec.floor_z + spec.room_height],
    };

    struct Block {
        cols: (usize, usize),
        rows: (usize, usize),
        layers: usize,
        occupancy: f32,
    }
    let mut blocks = Vec::with_capacity(spec.furniture.len());
    let mut furniture = Vec::with_capacity(spec.furniture.len());
    for (i, f) in spec.furniture.iter().enumerate() {
        ensure_finite(&[f.x0, f.x1, f.y0, f.y1, f.height])?;
        let inside = f.x0 >= interior.min[0] - SNAP_EPS
            && f.x1 <= interior.max[0] + SNAP_EPS
            && f.y0 >= interior.min[1] - SNAP_EPS
            && f.y1 <= interior.max[1] + SNAP_EPS
            && f.x1 > f.x0
            && f.y1 > f.y0;
        if !inside {
            return Err(Error::invalid(format!(
                "furniture {i} is not inside the room interior"
            )));
        }
        if !(f.height > 0.0 && f.height <= spec.room_height) {
            return Err(Error::invalid(format!(
                "furniture {i} height must be in (0, room_height]"
            )));
        }
        if !(0.0..=1.0).contains(&f.occupancy) {
            return Err(Error::invalid(format!(
                "furniture {i} occupancy must be in [0, 1]"
            )));
        }
        let cols = center_range(f.x0, f.x1, mpp);
        let rows = center_range(f.y0, f.y1, mpp);
        let layers = (f.height / dz - 0.5 + SNAP_EPS).floor() as isize + 1;
        let (Some(cols), Some(rows)) = (cols, rows) else {
            return Err(Error::invalid(format!(
                "furniture {i} is smaller than one voxel"
            )));
        };
        if layers < 2 {
            return Err(Error::invalid(format!(
                "furniture {i} does not rise above the floor layer"
            )));
        }
        let layers = layers as usize;
        furniture.push(FurnitureGeometry {
            bounds: Aabb {
                min: [cols.0 as f64 * mpp, rows.0 as f64 * mpp, spec.floor_z],
                max: [
                    (cols.1 + 1) as f64 * mpp,
                    (rows.1 + 1) as f64 * mpp,
                    spec.floor_z + layers as f64 * dz,
                ],
            },
            occupancy: f.occupancy,
        });
        blocks.push(Block {
            cols,
            rows,
            layers,
            occupancy: f.occupancy,
        });
    }

    let in_room = |x: usize, y: usize| x >= xa && x <= xb && y >= ya && y <= yb;
    let is_wall = |x: usize, y: usize| {
        in_room(x, y) && !(x >= ix0 && x < ix1 && y >= iy0 && y < iy1)
    };
    let grid = OccupancyGrid::from_fn(width, height, n_vertical, meta, |x, y, z| {
        if is_wall(x, y) || (z == 0 && in_room(x, y)) {
            return 1.0;
        }
        blocks
            .iter()
            .rev()
            .find(|b| {
                (b.cols.0..=b.cols.1).contains(&x)
                    && (b.rows.0..=b.rows.1).contains(&y)
                    && z < b.layers
            })
            .map_or(0.0, |b| b.occupancy)
    })?;

    Ok((
        grid,
        BoxRoomGeometry {
            interior,
            outer,
            furniture,
        },
    ))
}

/// A synthetic top-down view for a box room: dark walls, brown furniture,
/// and a floor whose color varies smoothly with position.
pub fn box_room_topdown(grid: &OccupancyGrid, geometry: &BoxRoomGeometry) -> Result<ColorImage> {
    let mpp = grid.meta().meters_per_pixel;
    let (w, h) = (grid.width(), grid.height_px());
    ColorImage::from_fn(w, h, |col, row| {
        let x = (col as f64 + 0.5) * mpp;
        let y = (row as f64 + 0.5) * mpp;
        let inside = |b: &Aabb| x >= b.min[0] && x <= b.max[0] && y >= b.min[1] && y <= b.max[1];
        if geometry.furniture.iter().any(|f| inside(&f.bounds)) {
            [0.55, 0.35, 0.2]
        } else if inside(&geometry.interior) {
            let u = (x / (w as f64 * mpp)) as f32;
            let v = (y / (h as f64 * mpp)) as f32;
            [0.55 + 0.35 * u, 0.6, 0.45 + 0.35 * v]
        } else if inside(&geometry.outer) {
            [0.2, 0.2, 0.2]
        } else {
            [1.0, 1.0, 1.0]
        }
    })
}

/// Wall mask matching a box room's rasterized perimeter.
pub fn box_room_wall_mask(grid: &OccupancyGrid, geometry: &BoxRoomGeometry) -> WallMask {
    let mpp = grid.meta().meters_per_pixel;
    let mut mask = WallMask::empty(grid.width(), grid.height_px());
    for y in 0..grid.height_px() {
        for x in 0..grid.width() {
            let (cx, cy) = ((x as f64 + 0.5) * mpp, (y as f64 + 0.5) * mpp);
            let within = |b: &Aabb| cx > b.min[0] && cx < b.max[0] && cy > b.min[1] && cy < b.max[1];
            mask.set(x, y, within(&geometry.outer) && !within(&geometry.interior));
        }
    }
    mask
}
