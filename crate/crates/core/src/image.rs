//! 8-bit grayscale image buffer, PNG I/O and float pyramids.
//!
//! PNGs are read through the `image` crate but color data is collapsed to
//! gray with the BT.601 weights (0.299 R + 0.587 G + 0.114 B) rather than the
//! crate's builtin converter, because the file-format contract pins those
//! coefficients.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Owned 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "image buffer holds {} bytes, expected {}x{}={}",
                data.len(),
                width,
                height,
                width as usize * height as usize
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    /// Nearest-pixel containment: used for instrument masks. A sub-pixel
    /// position is "inside" the mask iff its nearest integer pixel is
    /// nonzero. Positions outside the image are not contained.
    pub fn contains_point(&self, p: Point2) -> bool {
        if !p.is_finite() {
            return false;
        }
        let x = p.x.round();
        let y = p.y.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return false;
        }
        self.get(x as u32, y as u32) != 0
    }

    /// Fraction of nonzero pixels (diagnostics / degenerate-data checks).
    pub fn nonzero_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|&&v| v != 0).count() as f64 / self.data.len() as f64
    }

    /// Load a PNG as 8-bit gray. RGB(A) input is converted with BT.601
    /// weights; 16-bit input is scaled down.
    pub fn load_png(path: &Path) -> Result<Self> {
        let dynimg = ::image::open(path)?;
        let rgb = dynimg.to_rgb8();
        let (w, h) = rgb.dimensions();
        let mut data = Vec::with_capacity(w as usize * h as usize);
        for px in rgb.pixels() {
            let [r, g, b] = px.0;
            let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
            data.push(y.round().clamp(0.0, 255.0) as u8);
        }
        GrayImage::from_raw(w, h, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        ::image::save_buffer(
            path,
            &self.data,
            self.width,
            self.height,
            ::image::ColorType::L8,
        )?;
        Ok(())
    }
}

/// Float image used for pyramid levels and matching windows.
#[derive(Debug, Clone)]
pub struct FloatImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl FloatImage {
    pub fn from_gray(img: &GrayImage) -> Self {
        FloatImage {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn get_clamped(&self, x: i64, y: i64) -> f32 {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yc * self.width as usize + xc]
    }

    /// Bilinear sample with clamp-to-edge semantics.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let v00 = self.get_clamped(xi, yi);
        let v10 = self.get_clamped(xi + 1, yi);
        let v01 = self.get_clamped(xi, yi + 1);
        let v11 = self.get_clamped(xi + 1, yi + 1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }

    /// 2x2 box downsample (truncating odd edges).
    pub fn downsample(&self) -> FloatImage {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut data = Vec::with_capacity(w as usize * h as usize);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                let mut n = 0.0f32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let sx = (x * 2 + dx).min(self.width - 1) as i64;
                        let sy = (y * 2 + dy).min(self.height - 1) as i64;
                        acc += self.get_clamped(sx, sy);
                        n += 1.0;
                    }
                }
                data.push(acc / n);
            }
        }
        FloatImage {
            width: w,
            height: h,
            data,
        }
    }
}

/// Build an image pyramid, level 0 = full resolution. The level count is
/// clamped so the coarsest level stays at least `min_dim` pixels on a side.
pub fn build_pyramid(img: &GrayImage, levels: u32, min_dim: u32) -> Vec<FloatImage> {
    let mut out = vec![FloatImage::from_gray(img)];
    while (out.len() as u32) < levels {
        let last = out.last().unwrap();
        if last.width() / 2 < min_dim || last.height() / 2 < min_dim {
            break;
        }
        out.push(last.downsample());
    }
    out
}
