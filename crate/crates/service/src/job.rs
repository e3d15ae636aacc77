//! Render requests: validation against a scene and execution. The CLI goes
//! through the same path, so equal configs give equal bytes.

use panoforge::grid::{OccupancyGrid, WorldPoint};
use panoforge::image::ColorImage;
use panoforge::projection::EquirectCamera;
use panoforge::renderer::{render, RenderOptions, RenderSidecar, SamplingConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRequest {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outputs {
    Depth,
    Color,
    #[default]
    Both,
}

impl Outputs {
    pub fn depth(self) -> bool {
        matches!(self, Outputs::Depth | Outputs::Both)
    }

    pub fn color(self) -> bool {
        matches!(self, Outputs::Color | Outputs::Both)
    }
}

fn default_width() -> usize {
    1024
}

fn default_height() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub camera: CameraRequest,
    #[serde(default = "default_width")]
    pub pano_width: usize,
    #[serde(default = "default_height")]
    pub pano_height: usize,
    /// Radians added to every column's longitude.
    #[serde(default)]
    pub yaw: f64,
    /// Fields left out keep their defaults.
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub outputs: Outputs,
    /// Carried into the response metadata untouched.
    #[serde(default)]
    pub style_prompt: Option<String>,
}

/// Checks that a camera sits over the grid footprint and strictly between
/// the floor and the top of the room.
pub fn validate_camera(grid: &OccupancyGrid, p: WorldPoint) -> Result<(), String> {
    if !p.is_finite() {
        return Err("camera position must be finite".into());
    }
    let (fw, fh) = grid.footprint();
    if !(0.0..=fw).contains(&p.x) || !(0.0..=fh).contains(&p.y) {
        return Err(format!(
            "camera ({}, {}) is outside the {fw} m x {fh} m footprint",
            p.x, p.y
        ));
    }
    let m = grid.meta();
    if !(p.z > m.floor_z && p.z < m.floor_z + m.room_height) {
        return Err(format!(
            "camera z = {} must lie in ({}, {})",
            p.z,
            m.floor_z,
            m.floor_z + m.room_height
        ));
    }
    Ok(())
}

/// A validated render ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderJob {
    pub camera: EquirectCamera,
    pub sampling: SamplingConfig,
    pub outputs: Outputs,
    pub style_prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedImages {
    pub depth_png: Option<Vec<u8>>,
    pub color_png: Option<Vec<u8>>,
}

impl RenderJob {
    pub fn prepare(req: &RenderRequest, grid: &OccupancyGrid) -> Result<Self, ApiError> {
        let bad = |msg: String| ApiError::Unprocessable(msg);
        let pos = WorldPoint::new(req.camera.x, req.camera.y, req.camera.z);
        validate_camera(grid, pos).map_err(bad)?;
        let camera = EquirectCamera::new(pos, req.pano_width, req.pano_height)
            .and_then(|c| c.with_yaw(req.yaw))
            .map_err(|e| bad(e.to_string()))?;
        let sampling = req.sampling.clone().unwrap_or_default();
        sampling.validate().map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            camera,
            sampling,
            outputs: req.outputs,
            style_prompt: req.style_prompt.clone(),
        })
    }

    pub fn sidecar(&self, grid: &OccupancyGrid) -> RenderSidecar {
        RenderSidecar {
            camera: self.camera,
            sampling: self.sampling.clone(),
            grid_checksum: grid.checksum(),
            style_prompt: self.style_prompt.clone(),
        }
    }

    /// Cache key: digest of the scene id and the fully resolved job.
    pub fn cache_key(&self, scene_id: &str) -> String {
        let resolved = serde_json::json!({
            "scene": scene_id,
            "camera": self.camera,
            "sampling": self.sampling,
            "outputs": self.outputs,
            "style_prompt": self.style_prompt,
        });
        hex::encode(Sha256::digest(resolved.to_string().as_bytes()))
    }

    pub fn run(
        &self,
        grid: &OccupancyGrid,
        topdown: &ColorImage,
        workers: usize,
    ) -> panoforge::Result<RenderedImages> {
        let opts = RenderOptions {
            workers,
            depth: self.outputs.depth(),
            color: self.outputs.color(),
        };
        let out = render(&self.camera, grid, topdown, &self.sampling, &opts)?;
        Ok(RenderedImages {
            depth_png: out.depth.map(|p| p.to_png()).transpose()?,
            color_png: out.color.map(|p| p.to_png()).transpose()?,
        })
    }
}
