//! Raster carrier, affine model, resampling, gradients and pyramids.
//!
//! Coordinates are in pixel units with the origin at the top-left pixel
//! center, `x` growing rightward (columns) and `y` downward (rows). Storage
//! is row-major.

mod affine;
mod io;
mod pyramid;
mod warp;

pub use affine::AffineParams;
pub use io::{load_image, save_pgm, save_png, save_rgb_png};
pub use pyramid::{build_pyramid, downsample, gaussian_blur, Pyramid, PYRAMID_KERNEL};
pub use warp::{sample_bilinear, sample_bilinear_with_grad, warp_affine, ValidityMask};

use crate::error::{Error, Result};

/// Single-channel image with real intensities, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image with every pixel set to `value`.
    ///
    /// Panics on zero dimensions or a non-finite value.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("valid constant image")
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics on zero dimensions or if `f` produces a non-finite value.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("valid generated image")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Applies `f` pointwise. Panics if `f` yields a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
            .expect("pointwise map produced a non-finite value")
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Crops the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidImage(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.row(y)[x0..x0 + w]);
        }
        Self::new(w, h, data)
    }

    /// Affine rescale of the intensity range onto `[0, 1]`. A constant image
    /// maps to all zeros.
    pub fn normalized(&self) -> Self {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        if range > 0.0 {
            self.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
        } else {
            Self::filled(self.width, self.height, 0.0)
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }
}

/// Reflect-101 index folding (`dcb|abcd|cba`), valid for any offset.
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Horizontal and vertical derivatives: central differences in the
/// interior, one-sided differences on the border rows/columns.
pub fn gradients(img: &GrayImage) -> Result<(GrayImage, GrayImage)> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::ImageTooSmall(format!(
            "gradients need at least 2x2 pixels, got {w}x{h}"
        )));
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let d = img.data();
    for y in 0..h {
        let r = y * w;
        gx[r] = d[r + 1] - d[r];
        for x in 1..w - 1 {
            gx[r + x] = 0.5 * (d[r + x + 1] - d[r + x - 1]);
        }
        gx[r + w - 1] = d[r + w - 1] - d[r + w - 2];
    }
    for x in 0..w {
        gy[x] = d[w + x] - d[x];
        gy[(h - 1) * w + x] = d[(h - 1) * w + x] - d[(h - 2) * w + x];
    }
    for y in 1..h - 1 {
        for x in 0..w {
            gy[y * w + x] = 0.5 * (d[(y + 1) * w + x] - d[(y - 1) * w + x]);
        }
    }
    Ok((GrayImage::from_raw(w, h, gx), GrayImage::from_raw(w, h, gy)))
}
