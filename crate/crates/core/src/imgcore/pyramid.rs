use super::{reflect_index, GrayImage};
use crate::error::{Error, Result};

/// Normalized 5-tap Gaussian (σ = 1) used before each 2× decimation.
pub const PYRAMID_KERNEL: [f64; 5] = {
    // exp(-x²/2) for x = 0, 1, 2, normalized
    const E1: f64 = 0.606_530_659_712_633_4;
    const E2: f64 = 0.135_335_283_236_612_7;
    const SUM: f64 = 1.0 + 2.0 * E1 + 2.0 * E2;
    [E2 / SUM, E1 / SUM, 1.0 / SUM, E1 / SUM, E2 / SUM]
};

/// Smallest side allowed at the coarsest level of a multi-level pyramid.
pub const MIN_LEVEL_SIDE: usize = 16;

#[derive(Clone, Debug)]
pub struct Pyramid {
    /// Level 0 is full resolution.
    pub levels: Vec<GrayImage>,
    pub factor: usize,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn coarsest(&self) -> &GrayImage {
        self.levels.last().expect("pyramid has at least one level")
    }
}

fn blur_separable(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    let d = img.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &d[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &c) in PYRAMID_KERNEL.iter().enumerate() {
                acc += c * row[reflect_index(x as isize + k as isize - 2, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, &c) in PYRAMID_KERNEL.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - 2, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (o, &s) in dst.iter_mut().zip(src) {
                *o += c * s;
            }
        }
    }
    GrayImage::from_raw(w, h, out)
}

/// Gaussian blur followed by keeping every other row and column, so level
/// pixel `(i, j)` sits at full-resolution pixel `(2i, 2j)`.
pub fn downsample(img: &GrayImage) -> GrayImage {
    let blurred = blur_separable(img);
    let (w, h) = img.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        for x in 0..nw {
            out.push(blurred.get(2 * x, 2 * y));
        }
    }
    GrayImage::from_raw(nw, nh, out)
}

pub fn build_pyramid(img: &GrayImage, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
    }
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let next = downsample(out.last().unwrap());
        if next.width() < MIN_LEVEL_SIDE || next.height() < MIN_LEVEL_SIDE {
            return Err(Error::ImageTooSmall(format!(
                "{levels} levels reduce {}x{} below {MIN_LEVEL_SIDE}x{MIN_LEVEL_SIDE}",
                img.width(),
                img.height()
            )));
        }
        out.push(next);
    }
    Ok(Pyramid {
        levels: out,
        factor: 2,
    })
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable Gaussian blur with reflect borders, truncated at 3σ.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let (w, h) = img.dims();
    let tmp = GrayImage::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * img.get(reflect_index(x as isize + k as isize - r, w), y))
            .sum()
    });
    GrayImage::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * tmp.get(x, reflect_index(y as isize + k as isize - r, h)))
            .sum()
    })
}
