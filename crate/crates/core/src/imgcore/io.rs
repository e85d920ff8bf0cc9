use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::GrayImage;
use crate::error::{Error, Result};

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

fn read_err(path: &Path, reason: impl ToString) -> Error {
    Error::ImageRead {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn write_err(path: &Path, reason: impl ToString) -> Error {
    Error::ImageWrite {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Loads a PNG or PGM/PPM (8- or 16-bit) as intensities in `[0, 1]`.
/// Color inputs are reduced to luminance with Rec. 601 weights; alpha is
/// ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| read_err(path, e))?
        .with_guessed_format()
        .map_err(|e| read_err(path, e))?;
    let dynamic = reader.decode().map_err(|e| read_err(path, e))?;
    from_dynamic(&dynamic).map_err(|e| match e {
        Error::InvalidImage(reason) => read_err(path, reason),
        other => other,
    })
}

fn from_dynamic(img: &DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(b) => b.pixels().map(|p| luma(p.0.map(f64::from), 255.0)).collect(),
        DynamicImage::ImageRgba8(b) => b
            .pixels()
            .map(|p| luma([p.0[0], p.0[1], p.0[2]].map(f64::from), 255.0))
            .collect(),
        DynamicImage::ImageRgb16(b) => b.pixels().map(|p| luma(p.0.map(f64::from), 65535.0)).collect(),
        DynamicImage::ImageRgba16(b) => b
            .pixels()
            .map(|p| luma([p.0[0], p.0[1], p.0[2]].map(f64::from), 65535.0))
            .collect(),
        other => {
            return Err(Error::InvalidImage(format!(
                "unsupported pixel format {:?}",
                other.color()
            )))
        }
    };
    GrayImage::new(w, h, data)
}

#[inline]
fn luma(rgb: [f64; 3], full_scale: f64) -> f64 {
    (LUMA_R * rgb[0] + LUMA_G * rgb[1] + LUMA_B * rgb[2]) / full_scale
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_luma8(img: &GrayImage) -> ImageBuffer<Luma<u8>, Vec<u8>> {
    let buf: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    ImageBuffer::from_raw(img.width() as u32, img.height() as u32, buf)
        .expect("buffer length matches dimensions")
}

/// Writes an 8-bit grayscale PNG (`round(255·clamp(v, 0, 1))`).
pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_luma8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| write_err(path, e))
}

/// Writes a binary (P5) 8-bit PGM.
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(img.data().iter().map(|&v| quantize(v)));
    std::fs::write(path, bytes).map_err(|e| write_err(path, e))
}

/// Writes an 8-bit RGB PNG from three equally sized planes.
pub fn save_rgb_png(
    r: &GrayImage,
    g: &GrayImage,
    b: &GrayImage,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if r.dims() != g.dims() || r.dims() != b.dims() {
        return Err(Error::ShapeMismatch("RGB planes differ in size".into()));
    }
    let mut buf = Vec::with_capacity(r.data().len() * 3);
    for i in 0..r.data().len() {
        buf.extend([r.data()[i], g.data()[i], b.data()[i]].map(quantize));
    }
    let out: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(r.width() as u32, r.height() as u32, buf)
            .expect("buffer length matches dimensions");
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| write_err(path, e))
}
