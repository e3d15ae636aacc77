//! Volumetric panorama synthesis from a top-down view and an occupancy grid.
//!
//! The crate turns a normalized 3D occupancy field plus an orthographic
//! top-down image into coarse equirectangular depth and color panoramas by
//! alpha compositing uniform samples along each camera ray. Around that core
//! it carries the supporting math used when training and evaluating a
//! panorama generator on top of those coarse renders: denoising, depth
//! alignment and color-histogram losses, low-rank adapter algebra, PSNR/SSIM
//! and DBSCAN floor splitting of camera positions.
//!
//! ```no_run
//! use panoforge::grid::{OccupancyGrid, WorldPoint};
//! use panoforge::image::ColorImage;
//! use panoforge::projection::EquirectCamera;
//! use panoforge::renderer::{render_panoramas, SamplingConfig};
//!
//! # fn run(grid: OccupancyGrid, topdown: ColorImage) -> panoforge::Result<()> {
//! let cam = EquirectCamera::new(WorldPoint::new(2.0, 1.5, 1.6), 1024, 512)?;
//! let (depth, color) = render_panoramas(&cam, &grid, &topdown, &SamplingConfig::default())?;
//! std::fs::write("depth.png", depth.to_png()?)?;
//! std::fs::write("color.png", color.to_png()?)?;
//! # Ok(())
//! # }
//! ```

pub mod analysis;
pub mod error;
pub mod grid;
pub mod image;
pub mod losses;
pub mod lora;
pub mod projection;
pub mod reinforce;
pub mod renderer;
pub mod tensor;

pub use error::{Error, Result};
