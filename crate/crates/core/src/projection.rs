//! Equirectangular camera: panorama pixels to unit view directions and back.
//!
//! Longitude runs left to right across columns starting at `-π` (plus the
//! yaw offset); colatitude runs from the `+z` pole at the top row to `-z` at
//! the bottom row. Pixel centers sit at `(u + 0.5, v + 0.5)`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::WorldPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquirectCamera {
    pub position: WorldPoint,
    pub pano_width: usize,
    pub pano_height: usize,
    /// Seam rotation in radians, `[0, 2π)`.
    pub yaw_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: WorldPoint,
    pub direction: [f64; 3],
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> WorldPoint {
        self.origin.offset(self.direction, t)
    }
}

impl EquirectCamera {
    pub fn new(position: WorldPoint, pano_width: usize, pano_height: usize) -> Result<Self> {
        let cam = Self {
            position,
            pano_width,
            pano_height,
            yaw_offset: 0.0,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_yaw(mut self, yaw_offset: f64) -> Result<Self> {
        self.yaw_offset = yaw_offset;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pano_height == 0 || self.pano_width != 2 * self.pano_height {
            return Err(Error::invalid(format!(
                "panorama must be 2:1 and non-empty, got {}x{}",
                self.pano_width, self.pano_height
            )));
        }
        if !self.position.is_finite() {
            return Err(Error::invalid("camera position must be finite"));
        }
        if !(self.yaw_offset >= 0.0 && self.yaw_offset < TAU) {
            return Err(Error::invalid(format!(
                "yaw_offset must be in [0, 2π), got {}",
                self.yaw_offset
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.pano_width * self.pano_height
    }

    /// Angle subtended by one panorama column.
    pub fn column_angle(&self) -> f64 {
        TAU / self.pano_width as f64
    }

    /// Yaw expressed in columns. Offsets within 1e-9 of a whole column count
    /// snap to it so that such rotations permute columns exactly.
    fn yaw_columns(&self) -> f64 {
        let cols = self.yaw_offset * self.pano_width as f64 / TAU;
        let whole = cols.round();
        if (cols - whole).abs() < 1e-9 {
            whole
        } else {
            cols
        }
    }

    pub fn pixel_to_direction(&self, u: usize, v: usize) -> Result<[f64; 3]> {
        if u >= self.pano_width || v >= self.pano_height {
            return Err(Error::invalid(format!(
                "pixel ({u}, {v}) outside {}x{} panorama",
                self.pano_width, self.pano_height
            )));
        }
        Ok(self.direction_at(u, v))
    }

    /// Unchecked form of [`Self::pixel_to_direction`].
    #[inline]
    pub fn direction_at(&self, u: usize, v: usize) -> [f64; 3] {
        let w = self.pano_width as f64;
        let column = (u as f64 + 0.5 + self.yaw_columns()).rem_euclid(w);
        let lon = TAU * column / w - PI;
        let colat = PI * (v as f64 + 0.5) / self.pano_height as f64;
        let (sin_t, cos_t) = colat.sin_cos();
        let (sin_p, cos_p) = lon.sin_cos();
        [sin_t * cos_p, sin_t * sin_p, cos_t]
    }

    /// Continuous pixel coordinates of a direction. `u` lies in
    /// `[-0.5, W - 0.5)` and `v` in `[-0.5, H - 0.5]`.
    pub fn direction_to_pixel(&self, d: [f64; 3]) -> Result<(f64, f64)> {
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid("direction must be a nonzero finite vector"));
        }
        let z = (d[2] / norm).clamp(-1.0, 1.0);
        let w = self.pano_width as f64;
        let yaw = TAU * self.yaw_columns() / w;
        let lon = (d[1].atan2(d[0]) + PI - yaw).rem_euclid(TAU);
        let u = lon * w / TAU - 0.5;
        let v = z.acos() * self.pano_height as f64 / PI - 0.5;
        Ok((u, v))
    }

    /// Integer pixel containing a direction, wrapping columns and clamping
    /// rows.
    pub fn direction_to_pixel_index(&self, d: [f64; 3]) -> Result<(usize, usize)> {
        let (u, v) = self.direction_to_pixel(d)?;
        let col = ((u + 0.5).floor() as i64).rem_euclid(self.pano_width as i64) as usize;
        let row = ((v + 0.5).floor().max(0.0) as usize).min(self.pano_height - 1);
        Ok((col, row))
    }

    #[inline]
    pub fn ray_at(&self, u: usize, v: usize) -> Ray {
        Ray {
            origin: self.position,
            direction: self.direction_at(u, v),
        }
    }
}

/// One ray per pixel in row-major order.
pub fn generate_rays(cam: &EquirectCamera) -> impl Iterator<Item = (usize, usize, Ray)> + '_ {
    (0..cam.pano_height)
        .flat_map(move |v| (0..cam.pano_width).map(move |u| (u, v, cam.ray_at(u, v))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam(w: usize, h: usize) -> EquirectCamera {
        EquirectCamera::new(WorldPoint::new(1.0, 2.0, 1.6), w, h).unwrap()
    }

    #[test]
    fn rejects_bad_cameras() {
        let p = WorldPoint::new(0.0, 0.0, 0.0);
        assert!(EquirectCamera::new(p, 100, 100).is_err());
        assert!(EquirectCamera::new(p, 0, 0).is_err());
        assert!(cam(8, 4).with_yaw(TAU).is_err());
        assert!(cam(8, 4).with_yaw(-0.1).is_err());
        assert!(cam(8, 4).pixel_to_direction(8, 0).is_err());
        assert!(cam(8, 4).pixel_to_direction(0, 4).is_err());
    }

    #[test]
    fn top_row_looks_up() {
        let c = cam(512, 256);
        let limit = (PI / 256.0).cos();
        for u in [0, 100, 511] {
            assert!(c.pixel_to_direction(u, 0).unwrap()[2] > limit);
            assert!(c.pixel_to_direction(u, 255).unwrap()[2] < -limit);
        }
    }

    #[test]
    fn equator_closed_form() {
        let c = cam(512, 256);
        let d = c.pixel_to_direction(128, 128).unwrap();
        let lon = TAU * 128.5 / 512.0 - PI;
        let colat = PI * 128.5 / 256.0;
        assert_abs_diff_eq!(d[0], colat.sin() * lon.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], colat.sin() * lon.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(d[2], colat.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(d[2], -0.006135884649154, epsilon = 1e-12);
        assert!(d[1] < -0.99);
    }

    #[test]
    fn pole_maps_to_top_row() {
        let c = cam(8, 4);
        let (_, v) = c.direction_to_pixel([0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v, -0.5, epsilon = 1e-12);
        assert_eq!(c.direction_to_pixel_index([0.0, 0.0, 1.0]).unwrap().1, 0);
        assert_eq!(c.direction_to_pixel_index([0.0, 0.0, -1.0]).unwrap().1, 3);
        assert!(c.direction_to_pixel([0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn seam_wraps() {
        let c = cam(64, 32);
        let (u_left, _) = c.direction_to_pixel([-1.0, -0.0, 0.0]).unwrap();
        assert!(u_left.abs() < 1.0, "{u_left}");
        let eps = 1e-6;
        let d = [(PI - eps).cos(), (PI - eps).sin(), 0.0];
        let (u_right, _) = c.direction_to_pixel(d).unwrap();
        assert!((u_right - 64.0).abs() < 1.0, "{u_right}");
    }

    #[test]
    fn round_trip_small_panorama() {
        let c = cam(8, 4).with_yaw(0.3).unwrap();
        for v in 0..4 {
            for u in 0..8 {
                let (pu, pv) = c.direction_to_pixel(c.pixel_to_direction(u, v).unwrap()).unwrap();
                assert!((pu - u as f64).abs() < 1e-6 && (pv - v as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rays_cover_every_pixel() {
        let c = cam(2, 1);
        let rays: Vec<_> = generate_rays(&c).collect();
        assert_eq!(rays.len(), 2);
        let (a, b) = (rays[0].2.direction, rays[1].2.direction);
        assert_abs_diff_eq!(a[0], -b[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a[1], -b[1], epsilon = 1e-12);

        let c = cam(64, 32);
        let mut count = 0;
        let mut sum = [0.0; 3];
        for (u, v, ray) in generate_rays(&c) {
            assert_eq!((u, v), (count % 64, count / 64));
            assert_eq!(ray.origin, c.position);
            let n = ray.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
            for (s, d) in sum.iter_mut().zip(ray.direction.iter()) {
                *s += d;
            }
            count += 1;
        }
        assert_eq!(count, c.pixel_count());
        assert!(sum.iter().all(|s| s.abs() < 1e-6 * count as f64));
    }

    #[test]
    fn whole_column_yaw_shifts_directions() {
        let base = cam(16, 8);
        let shifted = base.with_yaw(base.column_angle()).unwrap();
        for v in 0..8 {
            for u in 0..16 {
                assert_eq!(shifted.direction_at(u, v), base.direction_at((u + 1) % 16, v));
            }
        }
    }
}
