use super::{AffineParams, GrayImage};
use crate::error::Result;

/// Tolerance when deciding whether a sample position lies inside the image.
const EDGE_EPS: f64 = 1e-9;

/// Distance from a grid line below which a sample counts as lying on it.
const NODE_EPS: f64 = 1e-9;

/// Per-pixel flag telling whether a resampled value came from inside the
/// source image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.valid
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Pointwise conjunction.
    pub fn and(&self, other: &Self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            valid: self
                .valid
                .iter()
                .zip(&other.valid)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

#[inline]
fn cell(img: &GrayImage, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
    let (w, h) = img.dims();
    let xmax = (w - 1) as f64;
    let ymax = (h - 1) as f64;
    if !(x >= -EDGE_EPS && x <= xmax + EDGE_EPS && y >= -EDGE_EPS && y <= ymax + EDGE_EPS) {
        return None;
    }
    let x = x.clamp(0.0, xmax);
    let y = y.clamp(0.0, ymax);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    Some((x0, y0, x - x0 as f64, y - y0 as f64))
}

/// Bilinear sample at `(x, y)`, or `None` if the position is outside the
/// image.
#[inline]
pub fn sample_bilinear(img: &GrayImage, x: f64, y: f64) -> Option<f64> {
    let (w, h) = img.dims();
    if w == 1 || h == 1 {
        return sample_degenerate(img, x, y);
    }
    let (x0, y0, fx, fy) = cell(img, x, y)?;
    let d = img.data();
    let i = y0 * w + x0;
    let top = (1.0 - fx) * d[i] + fx * d[i + 1];
    let bot = (1.0 - fx) * d[i + w] + fx * d[i + w + 1];
    Some((1.0 - fy) * top + fy * bot)
}

/// Interior grid line that `f` (the fractional offset inside cell `i0`)
/// sits on, if any.
#[inline]
fn interior_node(i0: usize, f: f64, n: usize) -> Option<usize> {
    let node = if f < NODE_EPS {
        i0
    } else if f > 1.0 - NODE_EPS {
        i0 + 1
    } else {
        return None;
    };
    (node >= 1 && node + 1 < n).then_some(node)
}

/// Bilinear sample together with the partial derivatives of the bilinear
/// interpolant with respect to `x` and `y`. On an interior grid line, where
/// the interpolant has a kink, the derivative across the line is the mean
/// of the two one-sided slopes.
#[inline]
pub fn sample_bilinear_with_grad(img: &GrayImage, x: f64, y: f64) -> Option<(f64, f64, f64)> {
    let (w, h) = img.dims();
    if w == 1 || h == 1 {
        return sample_degenerate(img, x, y).map(|v| (v, 0.0, 0.0));
    }
    let (x0, y0, fx, fy) = cell(img, x, y)?;
    let d = img.data();
    let i = y0 * w + x0;
    let (v00, v10, v01, v11) = (d[i], d[i + 1], d[i + w], d[i + w + 1]);
    let top = (1.0 - fx) * v00 + fx * v10;
    let bot = (1.0 - fx) * v01 + fx * v11;
    let value = (1.0 - fy) * top + fy * bot;
    let dx = match interior_node(x0, fx, w) {
        Some(n) => {
            let col = |c: usize| (1.0 - fy) * d[y0 * w + c] + fy * d[(y0 + 1) * w + c];
            0.5 * (col(n + 1) - col(n - 1))
        }
        None => (1.0 - fy) * (v10 - v00) + fy * (v11 - v01),
    };
    let dy = match interior_node(y0, fy, h) {
        Some(n) => {
            let row = |r: usize| (1.0 - fx) * d[r * w + x0] + fx * d[r * w + x0 + 1];
            0.5 * (row(n + 1) - row(n - 1))
        }
        None => bot - top,
    };
    Some((value, dx, dy))
}

fn sample_degenerate(img: &GrayImage, x: f64, y: f64) -> Option<f64> {
    let (w, h) = img.dims();
    let xr = x.round();
    let yr = y.round();
    if (x - xr).abs() > EDGE_EPS && w == 1 || (y - yr).abs() > EDGE_EPS && h == 1 {
        return None;
    }
    if w == 1 && h == 1 {
        return (xr == 0.0 && yr == 0.0).then(|| img.get(0, 0));
    }
    if w == 1 {
        if xr != 0.0 || y < -EDGE_EPS || y > (h - 1) as f64 + EDGE_EPS {
            return None;
        }
        let y = y.clamp(0.0, (h - 1) as f64);
        let y0 = (y.floor() as usize).min(h - 2);
        let f = y - y0 as f64;
        return Some((1.0 - f) * img.get(0, y0) + f * img.get(0, y0 + 1));
    }
    if yr != 0.0 || x < -EDGE_EPS || x > (w - 1) as f64 + EDGE_EPS {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let x0 = (x.floor() as usize).min(w - 2);
    let f = x - x0 as f64;
    Some((1.0 - f) * img.get(x0, 0) + f * img.get(x0 + 1, 0))
}

/// Inverse-warps `img` by `a`: output pixel `q` takes the bilinear sample of
/// `img` at `a⁻¹(q)`, so content at `p` moves to `a(p)`. Output pixels whose
/// source falls outside `img` are zero and flagged invalid.
pub fn warp_affine(img: &GrayImage, a: &AffineParams) -> Result<(GrayImage, ValidityMask)> {
    let inv = a.inverse()?;
    let (w, h) = img.dims();
    let mut out = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if let Some(v) = sample_bilinear(img, sx, sy) {
                out[y * w + x] = v;
                valid[y * w + x] = true;
            }
        }
    }
    Ok((
        GrayImage::from_raw(w, h, out),
        ValidityMask {
            width: w,
            height: h,
            valid,
        },
    ))
}
