//! Raster helpers: the top-down color image and PNG decoding into tensors.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB raster with channels in `[0, 1]`, row 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be >= 1"));
        }
        if data.len() != width * height {
            return Err(Error::mismatch(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(index) = data
            .iter()
            .flatten()
            .position(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::ValueOutOfRange {
                index,
                value: data[index / 3][index % 3] as f64,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Result<Self> {
        Self::new(width, height, vec![color; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> [f32; 3] {
        self.data[row * self.width + col]
    }

    /// Bilinear sample at continuous pixel coordinates where pixel `(c, r)`
    /// covers `[c, c+1) × [r, r+1)` and its color sits at the center.
    /// Coordinates past the outermost centers clamp to the edge.
    #[inline]
    pub fn sample_bilinear(&self, px: f64, py: f64) -> [f64; 3] {
        let (c0, c1, tx) = clamped_neighbors(px, self.width);
        let (r0, r1, ty) = clamped_neighbors(py, self.height);
        let a = self.get(c0, r0);
        let b = self.get(c1, r0);
        let c = self.get(c0, r1);
        let d = self.get(c1, r1);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] as f64 + (b[k] as f64 - a[k] as f64) * tx;
            let bottom = c[k] as f64 + (d[k] as f64 - c[k] as f64) * tx;
            out[k] = top + (bottom - top) * ty;
        }
        out
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }

    fn from_dynamic(img: &DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let data = rgb
            .pixels()
            .map(|p| p.0.map(|c| c as f32 / 255.0))
            .collect();
        Self {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            data,
        }
    }

    /// 8-bit RGB PNG encoding.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (p, c) in img.pixels_mut().zip(&self.data) {
            *p = Rgb(c.map(quantize_u8));
        }
        encode_png(DynamicImage::ImageRgb8(img))
    }

    /// `H×W×3` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().flatten().map(|&c| c as f64).collect();
        Tensor::new(&[self.height, self.width, 3], data).expect("shape matches pixel count")
    }
}

#[inline]
fn clamped_neighbors(p: f64, len: usize) -> (usize, usize, f64) {
    let f = p - 0.5;
    let base = f.floor();
    let last = (len - 1) as f64;
    if base < 0.0 {
        return (0, 0, 0.0);
    }
    if base >= last {
        return (len - 1, len - 1, 0.0);
    }
    let i = base as usize;
    (i, i + 1, f - base)
}

#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Decodes any PNG into an `H×W×3` tensor with channels in `[0, 1]`.
pub fn load_rgb_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(ColorImage::load(path)?.to_tensor())
}

/// Decodes a 16-bit millimeter depth PNG into an `H×W` tensor in meters.
pub fn depth_tensor_from_png(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let gray = match img {
        DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::Format(format!(
                "depth PNG must be 16-bit grayscale, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.pixels().map(|p| p.0[0] as f64 / 1000.0).collect();
    Tensor::new(&[h, w], data)
}

pub fn load_depth_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    depth_tensor_from_png(&std::fs::read(path)?)
}
