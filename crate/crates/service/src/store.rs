//! Content-addressed on-disk scene store.
//!
//! Layout: `<data_dir>/scenes/<id>/{topdown.png, grid.occ, scene.json}`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use panoforge::grid::OccupancyGrid;
use panoforge::image::ColorImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ApiError;

const TOPDOWN_FILE: &str = "topdown.png";
const GRID_FILE: &str = "grid.occ";
const RECORD_FILE: &str = "scene.json";

/// Optional JSON part of an upload.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct UploadMeta {
    #[serde(default)]
    pub name: Option<String>,
}

/// Scene listing entry, also persisted as `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub id: String,
    pub name: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub width: usize,
    pub height_px: usize,
    pub n_vertical: usize,
    pub meters_per_pixel: f64,
    pub room_height: f64,
    pub floor_z: f64,
    pub grid_checksum: String,
}

#[derive(Debug)]
pub struct Scene {
    pub summary: SceneSummary,
    pub grid: OccupancyGrid,
    pub topdown: ColorImage,
    pub topdown_png: Vec<u8>,
}

/// Digest identifying an upload: SHA-256 over the length-prefixed parts.
pub fn scene_id(topdown_png: &[u8], grid_bytes: &[u8], meta_json: &[u8]) -> String {
    let mut h = Sha256::new();
    for part in [topdown_png, grid_bytes, meta_json] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

/// Decodes and cross-checks an upload without touching the disk.
pub fn decode_scene(
    topdown_png: &[u8],
    grid_bytes: &[u8],
    meta_json: &[u8],
) -> Result<Scene, ApiError> {
    let grid = OccupancyGrid::from_bytes(grid_bytes)
        .map_err(|e| ApiError::BadRequest(format!("grid: {e}")))?;
    let topdown = ColorImage::from_png_bytes(topdown_png)
        .map_err(|e| ApiError::BadRequest(format!("topdown: {e}")))?;
    if (topdown.height(), topdown.width()) != (grid.height_px(), grid.width()) {
        return Err(ApiError::BadRequest(format!(
            "topdown is {}x{} but the grid footprint is {}x{}",
            topdown.width(),
            topdown.height(),
            grid.width(),
            grid.height_px()
        )));
    }
    let meta: UploadMeta = if meta_json.iter().all(u8::is_ascii_whitespace) {
        UploadMeta::default()
    } else {
        serde_json::from_slice(meta_json).map_err(|e| ApiError::BadRequest(format!("meta: {e}")))?
    };
    let id = scene_id(topdown_png, grid_bytes, meta_json);
    let m = *grid.meta();
    let summary = SceneSummary {
        name: meta.name.unwrap_or_else(|| id[..12].to_string()),
        id,
        created_at: 0,
        width: grid.width(),
        height_px: grid.height_px(),
        n_vertical: grid.n_vertical(),
        meters_per_pixel: m.meters_per_pixel,
        room_height: m.room_height,
        floor_z: m.floor_z,
        grid_checksum: grid.checksum(),
    };
    Ok(Scene {
        summary,
        grid,
        topdown,
        topdown_png: topdown_png.to_vec(),
    })
}

pub struct SceneStore {
    root: PathBuf,
    scenes: RwLock<HashMap<String, Arc<Scene>>>,
    /// Serializes inserts so two identical uploads cannot both write.
    write_lock: tokio::sync::Mutex<()>,
}

impl SceneStore {
    /// Opens (creating if needed) the store and loads every saved scene.
    pub fn open(data_dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let root = data_dir.as_ref().join("scenes");
        std::fs::create_dir_all(&root)?;
        let mut scenes = HashMap::new();
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            if dir.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')) {
                continue;
            }
            match load_scene(&dir) {
                Ok(scene) => {
                    scenes.insert(scene.summary.id.clone(), Arc::new(scene));
                }
                Err(e) => log::warn!("skipping {}: {e}", dir.display()),
            }
        }
        log::info!("loaded {} scene(s) from {}", scenes.len(), root.display());
        Ok(Self {
            root,
            scenes: RwLock::new(scenes),
            write_lock: tokio::sync::Mutex::new(()),
        })
    }

    pub fn get(&self, id: &str) -> Option<Arc<Scene>> {
        self.scenes.read().unwrap().get(id).cloned()
    }

    /// Scenes ordered by creation time, then id.
    pub fn list(&self) -> Vec<SceneSummary> {
        let mut out: Vec<_> = self
            .scenes
            .read()
            .unwrap()
            .values()
            .map(|s| s.summary.clone())
            .collect();
        out.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        out
    }

    /// Stores a decoded scene. Returns the stored scene and whether it was
    /// new.
    pub async fn insert(
        &self,
        mut scene: Scene,
        grid_bytes: &[u8],
    ) -> Result<(Arc<Scene>, bool), ApiError> {
        let _guard = self.write_lock.lock().await;
        if let Some(existing) = self.get(&scene.summary.id) {
            return Ok((existing, false));
        }
        scene.summary.created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let dir = self.root.join(&scene.summary.id);
        let tmp = self.root.join(format!(".{}.tmp", scene.summary.id));
        let record = serde_json::to_vec_pretty(&scene.summary).expect("summary serializes");
        let write = async {
            let _ = tokio::fs::remove_dir_all(&tmp).await;
            tokio::fs::create_dir_all(&tmp).await?;
            tokio::fs::write(tmp.join(TOPDOWN_FILE), &scene.topdown_png).await?;
            tokio::fs::write(tmp.join(GRID_FILE), grid_bytes).await?;
            tokio::fs::write(tmp.join(RECORD_FILE), record).await?;
            tokio::fs::rename(&tmp, &dir).await
        };
        write.await.map_err(|e| ApiError::Internal(format!("writing scene: {e}")))?;
        let scene = Arc::new(scene);
        self.scenes
            .write()
            .unwrap()
            .insert(scene.summary.id.clone(), scene.clone());
        Ok((scene, true))
    }
}

fn load_scene(dir: &Path) -> Result<Scene, Box<dyn std::error::Error>> {
    let summary: SceneSummary = serde_json::from_slice(&std::fs::read(dir.join(RECORD_FILE))?)?;
    let topdown_png = std::fs::read(dir.join(TOPDOWN_FILE))?;
    let grid = OccupancyGrid::load(dir.join(GRID_FILE))?;
    let topdown = ColorImage::from_png_bytes(&topdown_png)?;
    if grid.checksum() != summary.grid_checksum {
        return Err("grid checksum does not match scene record".into());
    }
    Ok(Scene {
        summary,
        grid,
        topdown,
        topdown_png,
    })
}
