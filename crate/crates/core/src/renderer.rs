//! Coarse depth and color panoramas by alpha compositing along camera rays.
//!
//! Each ray takes `S` uniform samples at `d_i = (i - 0.5)·δ`. A sample's
//! opacity comes from the trilinear occupancy at its position, and the
//! transmittance in front of it is `T_i = ∏_{j<i} (1 - α_j)`. Depth is
//! `Σ T_i α_i d_i` plus the residual transmittance placed at the far end of
//! the ray; color is `Σ T_i α_i c_i` with `c_i` looked up in the top-down
//! image straight below the sample, plus the residual over a background.
//! The color pass uses a shorter ray than the depth pass with the same
//! sample count, which densifies samples near the camera.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::image::{encode_png, quantize_u8, ColorImage};
use crate::projection::{EquirectCamera, Ray};

pub use reference::{composite_samples, render_reference};

/// Environment variable capping the number of render workers.
pub const THREADS_ENV: &str = "PANOFORGE_THREADS";

/// How the depth pass treats transmittance left over after the last sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthResidual {
    /// Remaining transmittance contributes `ray_length_depth`.
    #[default]
    MaxRange,
    /// Divide by accumulated opacity; rays that hit nothing report
    /// `ray_length_depth`.
    Renormalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub samples: usize,
    pub ray_length_depth: f64,
    pub ray_length_color: f64,
    /// Opacity per meter at occupancy 1 for non-solid material.
    pub opacity_scale: f64,
    /// Occupancy at or above which a sample is fully opaque.
    pub solid_threshold: f32,
    pub background: [f64; 3],
    /// Stop marching once transmittance falls below this; 0 disables.
    pub termination_threshold: f64,
    pub depth_residual: DepthResidual,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples: 192,
            ray_length_depth: 16.0,
            ray_length_color: 8.0,
            opacity_scale: 50.0,
            solid_threshold: 0.999,
            background: [0.5; 3],
            termination_threshold: 1e-5,
            depth_residual: DepthResidual::MaxRange,
        }
    }
}

impl SamplingConfig {
    /// Sets the depth ray length and the color ray to half of it.
    pub fn with_ray_length(mut self, ray_length_depth: f64) -> Self {
        self.ray_length_depth = ray_length_depth;
        self.ray_length_color = ray_length_depth / 2.0;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn depth_step(&self) -> f64 {
        self.ray_length_depth / self.samples as f64
    }

    pub fn color_step(&self) -> f64 {
        self.ray_length_color / self.samples as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::invalid("samples per ray must be >= 2"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.ray_length_depth) || !positive(self.ray_length_color) {
            return Err(Error::invalid("ray lengths must be positive"));
        }
        if !positive(self.opacity_scale) {
            return Err(Error::invalid("opacity_scale must be positive"));
        }
        if !(self.solid_threshold > 0.0 && self.solid_threshold <= 1.0) {
            return Err(Error::invalid("solid_threshold must be in (0, 1]"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("background color must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.termination_threshold) {
            return Err(Error::invalid("termination_threshold must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-sample opacity. Samples at or above the solid threshold are opaque;
/// below it opacity follows `1 - exp(-k·occ·δ)`.
#[inline]
pub fn alpha_from_occupancy(occ: f64, step: f64, cfg: &SamplingConfig) -> f64 {
    if occ >= cfg.solid_threshold as f64 {
        1.0
    } else {
        1.0 - (-cfg.opacity_scale * occ * step).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanoramaKind {
    /// One channel, meters.
    Depth,
    /// Three channels in `[0, 1]`.
    Color,
}

impl PanoramaKind {
    pub fn channels(self) -> usize {
        match self {
            PanoramaKind::Depth => 1,
            PanoramaKind::Color => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    width: usize,
    height: usize,
    kind: PanoramaKind,
    data: Vec<f32>,
}

impl Panorama {
    pub fn new(width: usize, height: usize, kind: PanoramaKind, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * kind.channels() {
            return Err(Error::mismatch(format!(
                "{width}x{height} {kind:?} panorama needs {} values, got {}",
                width * height * kind.channels(),
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            kind,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> PanoramaKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Channel values of pixel `(u, v)`.
    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let c = self.kind.channels();
        let i = (v * self.width + u) * c;
        &self.data[i..i + c]
    }

    /// Depth: 16-bit grayscale in millimeters, clamped at 65.535 m.
    /// Color: 8-bit RGB.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let (w, h) = (self.width as u32, self.height as u32);
        let img = match self.kind {
            PanoramaKind::Depth => {
                let mm = self
                    .data
                    .iter()
                    .map(|&d| (d as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16)
                    .collect();
                image::DynamicImage::ImageLuma16(
                    image::ImageBuffer::from_raw(w, h, mm).expect("buffer sized to panorama"),
                )
            }
            PanoramaKind::Color => {
                let rgb = self.data.iter().map(|&c| quantize_u8(c)).collect();
                image::DynamicImage::ImageRgb8(
                    image::ImageBuffer::from_raw(w, h, rgb).expect("buffer sized to panorama"),
                )
            }
        };
        encode_png(img)
    }
}

/// Metadata written next to rendered panoramas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSidecar {
    pub camera: EquirectCamera,
    pub sampling: SamplingConfig,
    pub grid_checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_prompt: Option<String>,
}

/// Worker count from `PANOFORGE_THREADS`, else the machine's parallelism.
pub fn default_workers() -> usize {
    let available = thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(available, |n| n.min(available.max(1)).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub workers: usize,
    pub depth: bool,
    pub color: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            workers: default_workers(),
            depth: true,
            color: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub depth: Option<Panorama>,
    pub color: Option<Panorama>,
}

/// Running front-to-back composite along one ray.
struct Accumulator {
    transmittance: f64,
    sum: [f64; 3],
}

impl Accumulator {
    fn new() -> Self {
        Self {
            transmittance: 1.0,
            sum: [0.0; 3],
        }
    }

    #[inline]
    fn add(&mut self, alpha: f64, value: [f64; 3]) {
        let w = self.transmittance * alpha;
        for (s, v) in self.sum.iter_mut().zip(value) {
            *s += w * v;
        }
        self.transmittance *= 1.0 - alpha;
    }
}

/// Per-ray marching setup shared by the depth and color passes.
struct March {
    origin: [f64; 3],
    dir: [f64; 3],
    step: f64,
    first: usize,
    end: usize,
}

impl March {
    /// Restricts the sample range to indices whose positions may fall in the
    /// grid box; samples outside contribute nothing.
    fn new(ray: &Ray, grid: &OccupancyGrid, length: f64, samples: usize) -> Self {
        let origin = grid.world_to_voxel(ray.origin);
        let mpp = grid.meta().meters_per_pixel;
        let dz = grid.voxel_z_size();
        let d = ray.direction;
        let dir = [d[0] / mpp, d[1] / mpp, d[2] / dz];
        let step = length / samples as f64;
        let bounds = [
            grid.width() as f64,
            grid.height_px() as f64,
            grid.n_vertical() as f64,
        ];
        let mut t0 = 0.0f64;
        let mut t1 = length;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < 0.0 || origin[k] > bounds[k] {
                    t1 = -1.0;
                }
                continue;
            }
            let a = -origin[k] / dir[k];
            let b = (bounds[k] - origin[k]) / dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        let (first, end) = if t1 < t0 {
            (0, 0)
        } else {
            // One sample of slack on each side keeps the clip conservative.
            let first = (t0 / step - 1.5).floor().max(0.0) as usize;
            let end = ((t1 / step + 1.5).ceil().max(0.0) as usize).min(samples);
            (first.min(end), end)
        };
        Self {
            origin,
            dir,
            step,
            first,
            end,
        }
    }

    #[inline]
    fn distance(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.step
    }

    #[inline]
    fn voxel_at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

/// Expected depth along one ray, in meters.
pub fn composite_depth(ray: &Ray, grid: &OccupancyGrid, cfg: &SamplingConfig) -> f64 {
    let length = cfg.ray_length_depth;
    let march = March::new(ray, grid, length, cfg.samples);
    let mut acc = Accumulator::new();
    let mut stopped_at = None;
    for i in march.first..march.end {
        let t = march.distance(i);
        let [vx, vy, vz] = march.voxel_at(t);
        let occ = grid.sample_voxel(vx, vy, vz);
        if occ <= 0.0 {
            continue;
        }
        acc.add(alpha_from_occupancy(occ, march.step, cfg), [t, 0.0, 0.0]);
        if acc.transmittance < cfg.termination_threshold {
            stopped_at = Some(t);
            break;
        }
    }
    finish_depth(acc.sum[0], acc.transmittance, stopped_at, cfg)
}

/// Closes a depth composite. After an early stop the leftover transmittance
/// is placed halfway between the stopping sample and the end of the ray,
/// which bounds the error by `T·(L - d)/2`.
pub(crate) fn finish_depth(
    sum: f64,
    transmittance: f64,
    stopped_at: Option<f64>,
    cfg: &SamplingConfig,
) -> f64 {
    let length = cfg.ray_length_depth;
    match cfg.depth_residual {
        DepthResidual::MaxRange => {
            let tail = stopped_at.map_or(length, |d| 0.5 * (d + length));
            sum + transmittance * tail
        }
        DepthResidual::Renormalize => {
            let opacity = 1.0 - transmittance;
            if opacity > 0.0 {
                sum / opacity
            } else {
                length
            }
        }
    }
}

/// Composited color along one ray.
///
/// The top-down image must match the grid footprint pixel for pixel.
pub fn composite_color(
    ray: &Ray,
    grid: &OccupancyGrid,
    topdown: &ColorImage,
    cfg: &SamplingConfig,
) -> Result<[f64; 3]> {
    check_topdown(grid, topdown)?;
    Ok(composite_color_unchecked(ray, grid, topdown, cfg))
}

#[inline]
fn composite_color_unchecked(
    ray: &Ray,
    grid: &OccupancyGrid,
    topdown: &ColorImage,
    cfg: &SamplingConfig,
) -> [f64; 3] {
    let march = March::new(ray, grid, cfg.ray_length_color, cfg.samples);
    let mut acc = Accumulator::new();
    for i in march.first..march.end {
        let t = march.distance(i);
        let [vx, vy, vz] = march.voxel_at(t);
        let occ = grid.sample_voxel(vx, vy, vz);
        if occ <= 0.0 {
            continue;
        }
        // Voxel x/y coordinates are top-down pixel coordinates.
        let c = topdown.sample_bilinear(vx, vy);
        acc.add(alpha_from_occupancy(occ, march.step, cfg), c);
        if acc.transmittance < cfg.termination_threshold {
            break;
        }
    }
    finish_color(acc.sum, acc.transmittance, cfg)
}

pub(crate) fn finish_color(sum: [f64; 3], transmittance: f64, cfg: &SamplingConfig) -> [f64; 3] {
    let bg = cfg.background;
    [
        sum[0] + transmittance * bg[0],
        sum[1] + transmittance * bg[1],
        sum[2] + transmittance * bg[2],
    ]
}

pub(crate) fn check_topdown(grid: &OccupancyGrid, topdown: &ColorImage) -> Result<()> {
    if topdown.width() != grid.width() || topdown.height() != grid.height_px() {
        return Err(Error::mismatch(format!(
            "top-down image is {}x{}, grid footprint is {}x{}",
            topdown.width(),
            topdown.height(),
            grid.width(),
            grid.height_px()
        )));
    }
    Ok(())
}

/// Renders both panoramas with the default worker count.
pub fn render_panoramas(
    cam: &EquirectCamera,
    grid: &OccupancyGrid,
    topdown: &ColorImage,
    cfg: &SamplingConfig,
) -> Result<(Panorama, Panorama)> {
    let out = render(cam, grid, topdown, cfg, &RenderOptions::default())?;
    Ok((
        out.depth.expect("depth requested"),
        out.color.expect("color requested"),
    ))
}

/// Renders the requested panoramas. Rows are split into `workers`
/// contiguous bands; every pixel is computed independently, so the output
/// does not depend on the partition.
pub fn render(
    cam: &EquirectCamera,
    grid: &OccupancyGrid,
    topdown: &ColorImage,
    cfg: &SamplingConfig,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    cam.validate()?;
    cfg.validate()?;
    check_topdown(grid, topdown)?;
    // A one-layer floor is solid only below its voxel center; thinner than a
    // step, samples can jump over it.
    if opts.depth && grid.voxel_z_size() / 2.0 < cfg.depth_step() {
        log::warn!(
            "voxel height {:.3} m is under twice the depth step {:.3} m; thin layers such as a \
             single-layer floor may be missed (use fewer layers or more samples)",
            grid.voxel_z_size(),
            cfg.depth_step()
        );
    }

    let (w, h) = (cam.pano_width, cam.pano_height);
    let workers = opts.workers.clamp(1, h);
    let rows_per_band = h.div_ceil(workers);

    let mut depth = vec![0.0f32; if opts.depth { w * h } else { 0 }];
    let mut color = vec![0.0f32; if opts.color { w * h * 3 } else { 0 }];

    let render_band = |first_row: usize, depth: &mut [f32], color: &mut [f32]| {
        let rows = if opts.depth {
            depth.len() / w
        } else {
            color.len() / (3 * w)
        };
        for r in 0..rows {
            let v = first_row + r;
            for u in 0..w {
                let ray = cam.ray_at(u, v);
                let px = r * w + u;
                if opts.depth {
                    depth[px] = composite_depth(&ray, grid, cfg) as f32;
                }
                if opts.color {
                    let c = composite_color_unchecked(&ray, grid, topdown, cfg);
                    for k in 0..3 {
                        color[px * 3 + k] = c[k] as f32;
                    }
                }
            }
        }
    };

    if workers == 1 {
        render_band(0, &mut depth, &mut color);
    } else {
        let depth_bands: Vec<&mut [f32]> = if opts.depth {
            depth.chunks_mut(rows_per_band * w).collect()
        } else {
            Vec::new()
        };
        let color_bands: Vec<&mut [f32]> = if opts.color {
            color.chunks_mut(rows_per_band * w * 3).collect()
        } else {
            Vec::new()
        };
        let bands = h.div_ceil(rows_per_band);
        let mut depth_iter = depth_bands.into_iter();
        let mut color_iter = color_bands.into_iter();
        thread::scope(|s| {
            for b in 0..bands {
                let d = depth_iter.next().unwrap_or_default();
                let c = color_iter.next().unwrap_or_default();
                let render_band = &render_band;
                s.spawn(move || render_band(b * rows_per_band, d, c));
            }
        });
    }

    Ok(RenderOutput {
        depth: opts
            .depth
            .then(|| Panorama::new(w, h, PanoramaKind::Depth, depth))
            .transpose()?,
        color: opts
            .color
            .then(|| Panorama::new(w, h, PanoramaKind::Color, color))
            .transpose()?,
    })
}

/// One composited sample as seen by the slow reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeSample {
    pub distance: f64,
    pub alpha: f64,
    /// Transmittance in front of this sample.
    pub transmittance: f64,
    pub color: Option<[f64; 3]>,
}

mod reference {
    //! Straightforward sequential renderer used as an oracle for the fast
    //! path: one world-space query per sample, every sample materialized.

    use super::*;

    /// All `S` samples along a ray over `length` meters, without early
    /// termination, and the transmittance left after the last one. When a
    /// top-down image is given, each sample carries its color.
    pub fn composite_samples(
        ray: &Ray,
        grid: &OccupancyGrid,
        topdown: Option<&ColorImage>,
        length: f64,
        cfg: &SamplingConfig,
    ) -> (Vec<CompositeSample>, f64) {
        let step = length / cfg.samples as f64;
        let mpp = grid.meta().meters_per_pixel;
        let mut samples = Vec::new();
        let mut transmittance = 1.0;
        for i in 1..=cfg.samples {
            let distance = (i as f64 - 0.5) * step;
            let p = ray.at(distance);
            let occ = grid.sample_occupancy(p);
            let alpha = alpha_from_occupancy(occ, step, cfg);
            let color = topdown.map(|img| img.sample_bilinear(p.x / mpp, p.y / mpp));
            samples.push(CompositeSample {
                distance,
                alpha,
                transmittance,
                color,
            });
            transmittance *= 1.0 - alpha;
        }
        (samples, transmittance)
    }

    fn reference_depth(ray: &Ray, grid: &OccupancyGrid, cfg: &SamplingConfig) -> f64 {
        let (samples, _) = composite_samples(ray, grid, None, cfg.ray_length_depth, cfg);
        let mut sum = 0.0;
        let mut transmittance = 1.0;
        let mut stopped_at = None;
        for s in &samples {
            sum += s.transmittance * s.alpha * s.distance;
            transmittance = s.transmittance * (1.0 - s.alpha);
            if s.alpha > 0.0 && transmittance < cfg.termination_threshold {
                stopped_at = Some(s.distance);
                break;
            }
        }
        finish_depth(sum, transmittance, stopped_at, cfg)
    }

    fn reference_color(
        ray: &Ray,
        grid: &OccupancyGrid,
        topdown: &ColorImage,
        cfg: &SamplingConfig,
    ) -> [f64; 3] {
        let (samples, _) = composite_samples(ray, grid, Some(topdown), cfg.ray_length_color, cfg);
        let mut sum = [0.0; 3];
        let mut transmittance = 1.0;
        for s in &samples {
            let c = s.color.expect("color samples requested");
            for k in 0..3 {
                sum[k] += s.transmittance * s.alpha * c[k];
            }
            transmittance = s.transmittance * (1.0 - s.alpha);
            if s.alpha > 0.0 && transmittance < cfg.termination_threshold {
                break;
            }
        }
        finish_color(sum, transmittance, cfg)
    }

    /// Single-threaded, allocation-heavy render of both panoramas.
    pub fn render_reference(
        cam: &EquirectCamera,
        grid: &OccupancyGrid,
        topdown: &ColorImage,
        cfg: &SamplingConfig,
    ) -> Result<(Panorama, Panorama)> {
        cam.validate()?;
        cfg.validate()?;
        check_topdown(grid, topdown)?;
        let mut depth = Vec::new();
        let mut color = Vec::new();
        for (_, _, ray) in crate::projection::generate_rays(cam) {
            depth.push(reference_depth(&ray, grid, cfg) as f32);
            color.extend(reference_color(&ray, grid, topdown, cfg).map(|c| c as f32));
        }
        let (w, h) = (cam.pano_width, cam.pano_height);
        Ok((
            Panorama::new(w, h, PanoramaKind::Depth, depth)?,
            Panorama::new(w, h, PanoramaKind::Color, color)?,
        ))
    }
}
