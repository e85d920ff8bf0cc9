//! SSIM, the normalized structural-similarity training loss, and the
//! registration error measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{gradients, AffineParams, GrayImage};
use crate::pc::FeatureStack;

/// Guard added to the loss denominator.
pub const LOSS_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Structure-protection exponent.
    pub c: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            c: 0.7,
            ssim_window: 11,
            ssim_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidConfig(format!("c must be > 0, got {}", self.c)));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma > 0.0 && self.data_range > 0.0) {
            return Err(Error::InvalidConfig("SSIM sigma and data range must be positive".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    /// Unnormalized Gaussian taps of the SSIM window.
    pub fn window(&self) -> Vec<f64> {
        let r = (self.ssim_window / 2) as isize;
        let s2 = 2.0 * self.ssim_sigma * self.ssim_sigma;
        (-r..=r).map(|i| (-((i * i) as f64) / s2).exp()).collect()
    }
}

/// Gaussian-weighted local mean with the window truncated and renormalized
/// at the borders.
fn local_mean(data: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &g) in taps.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                if sx >= 0 && (sx as usize) < w {
                    acc += g * data[y * w + sx as usize];
                    norm += g;
                }
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &g) in taps.iter().enumerate() {
                let sy = y as isize + k as isize - r;
                if sy >= 0 && (sy as usize) < h {
                    acc += g * tmp[sy as usize * w + x];
                    norm += g;
                }
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

/// Mean SSIM with a Gaussian window.
pub fn ssim(a: &GrayImage, b: &GrayImage, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "SSIM inputs {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (w, h) = a.dims();
    let taps = cfg.window();
    let (da, db) = (a.data(), b.data());
    let aa: Vec<f64> = da.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = db.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = da.iter().zip(db).map(|(x, y)| x * y).collect();
    let mu_a = local_mean(da, w, h, &taps);
    let mu_b = local_mean(db, w, h, &taps);
    let m_aa = local_mean(&aa, w, h, &taps);
    let m_bb = local_mean(&bb, w, h, &taps);
    let m_ab = local_mean(&ab, w, h, &taps);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for i in 0..w * h {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / (w * h) as f64)
}

/// Sum of absolute horizontal and vertical gradients of one map.
pub fn gradient_mass(img: &GrayImage) -> Result<f64> {
    let (gx, gy) = gradients(img)?;
    Ok(gx.data().iter().chain(gy.data()).map(|v| v.abs()).sum())
}

/// Normalized structural-similarity loss between two feature stacks:
/// `(1 − mean_o SSIM) / |Σ_l Σ_o (‖∇_l P1_o‖₁ + ‖∇_l P2_o‖₁)/N_o|^c`.
pub fn similarity_loss(p1: &FeatureStack, p2: &FeatureStack, cfg: &LossConfig) -> Result<f64> {
    if p1.n_channels() != p2.n_channels() || p1.dims() != p2.dims() {
        return Err(Error::ShapeMismatch(format!(
            "stacks {}x{:?} vs {}x{:?}",
            p1.n_channels(),
            p1.dims(),
            p2.n_channels(),
            p2.dims()
        )));
    }
    let n_o = p1.n_channels() as f64;
    let mut ssim_sum = 0.0;
    let mut mass = 0.0;
    for (a, b) in p1.channels.iter().zip(&p2.channels) {
        ssim_sum += ssim(a, b, cfg)?;
        mass += gradient_mass(a)? + gradient_mass(b)?;
    }
    let numerator = 1.0 - ssim_sum / n_o;
    if numerator == 0.0 {
        return Ok(0.0);
    }
    Ok(numerator / ((mass / n_o).abs().powf(cfg.c) + LOSS_GUARD))
}

/// Mean endpoint distance between two transforms over every pixel of a
/// `width × height` grid.
pub fn aee(a_gt: &AffineParams, a_hat: &AffineParams, width: usize, height: usize) -> f64 {
    let mut total = 0.0;
    for y in 0..height {
        for x in 0..width {
            total += endpoint_distance(a_gt, a_hat, x as f64, y as f64);
        }
    }
    total / (width * height) as f64
}

/// Mean endpoint distance over the four image corners.
pub fn ace(a_gt: &AffineParams, a_hat: &AffineParams, width: usize, height: usize) -> f64 {
    let (xm, ym) = ((width - 1) as f64, (height - 1) as f64);
    [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)]
        .iter()
        .map(|&(x, y)| endpoint_distance(a_gt, a_hat, x, y))
        .sum::<f64>()
        / 4.0
}

#[inline]
fn endpoint_distance(a: &AffineParams, b: &AffineParams, x: f64, y: f64) -> f64 {
    let (ax, ay) = a.apply(x, y);
    let (bx, by) = b.apply(x, y);
    (ax - bx).hypot(ay - by)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random())
    }

    #[test]
    fn ssim_self_and_constants() {
        let cfg = LossConfig::default();
        let x = random(24, 19, 1);
        assert!((ssim(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-12);
        let c = GrayImage::filled(16, 16, 0.5);
        assert!((ssim(&c, &c, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_checkerboard_complement_is_negative() {
        let cfg = LossConfig::default();
        let x = GrayImage::from_fn(32, 32, |x, y| ((x + y) % 2) as f64);
        let inv = x.map(|v| 1.0 - v);
        assert!(ssim(&x, &inv, &cfg).unwrap() < 0.0);
    }

    #[test]
    fn ssim_symmetric_and_shape_checked() {
        let cfg = LossConfig::default();
        let a = random(20, 20, 2);
        let b = random(20, 20, 3);
        let ab = ssim(&a, &b, &cfg).unwrap();
        assert!((ab - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        assert!(ssim(&a, &random(20, 21, 4), &cfg).is_err());
    }

    #[test]
    fn loss_zero_for_identical_stacks() {
        let cfg = LossConfig::default();
        let s = FeatureStack::new(vec![random(12, 12, 5), random(12, 12, 6)]).unwrap();
        assert_eq!(similarity_loss(&s, &s, &cfg).unwrap(), 0.0);
        let flat = FeatureStack::new(vec![GrayImage::filled(12, 12, 0.0); 2]).unwrap();
        assert_eq!(similarity_loss(&flat, &flat, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn loss_rejects_mismatched_stacks() {
        let cfg = LossConfig::default();
        let a = FeatureStack::new(vec![random(12, 12, 5)]).unwrap();
        let b = FeatureStack::new(vec![random(12, 12, 5); 2]).unwrap();
        assert!(similarity_loss(&a, &b, &cfg).is_err());
    }

    #[test]
    fn translation_errors_are_exact() {
        let id = AffineParams::IDENTITY;
        let t = AffineParams::translation(3.0, 4.0);
        assert_eq!(aee(&id, &t, 17, 9), 5.0);
        assert_eq!(ace(&id, &t, 17, 9), 5.0);
        assert_eq!(aee(&t, &t, 17, 9), 0.0);
        assert_eq!(ace(&t, &t, 17, 9), 0.0);
    }

    #[test]
    fn corner_error_oracle() {
        let gt = AffineParams::new([1.1, 0.1, -10.0, -0.1, 1.1, 10.0]);
        let id = AffineParams::IDENTITY;
        // displacement of corner (x, y) is (0.1x + 0.1y - 10, -0.1x + 0.1y + 10)
        let d = |x: f64, y: f64| (0.1 * x + 0.1 * y - 10.0).hypot(-0.1 * x + 0.1 * y + 10.0);
        let expect = (d(0.0, 0.0) + d(127.0, 0.0) + d(0.0, 127.0) + d(127.0, 127.0)) / 4.0;
        assert!((ace(&gt, &id, 128, 128) - expect).abs() < 1e-12);
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig { c: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { ssim_window: 4, ..Default::default() }.validate().is_err());
        assert!(LossConfig { ssim_window: 1, ..Default::default() }.validate().is_err());
    }
}
