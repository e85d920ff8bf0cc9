//! Hierarchical affine registration on feature stacks.
//!
//! The objective is the mean squared difference between the reference
//! features at `p` and the floating features sampled at `a(p)`, over the
//! pixels whose sample lands inside the floating image. With
//! `I_flt = warp_affine(I_ref, a_gt)` its minimizer is `a = a_gt`.
//!
//! Each pyramid level runs gradient descent with an Armijo backtracking
//! line search. The descent works in centered, size-normalized
//! coordinates so that linear and translation parameters have comparable
//! scale; this is a change of variables and leaves the minimizer unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::FilterBank;
use crate::imgcore::{build_pyramid, gaussian_blur, sample_bilinear, sample_bilinear_with_grad, AffineParams, GrayImage};
use crate::pc::{forward, FeatureStack, PcParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegConfig {
    /// Pyramid depth; `None` picks the deepest pyramid whose coarsest short
    /// side is at least `min_coarsest_side`.
    pub levels: Option<usize>,
    pub min_coarsest_side: usize,
    pub max_iters: usize,
    /// Stop when the relative objective decrease of an accepted step falls
    /// below this.
    pub tol: f64,
    /// First trial step, in pixels of motion at the current level.
    pub initial_step_px: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Gaussian σ, in pixels of the current level, applied to every feature
    /// channel of the coarser levels before matching. The finest level is
    /// never blurred. 0 disables it.
    pub feature_blur: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            levels: None,
            min_coarsest_side: 32,
            max_iters: 300,
            tol: 1e-7,
            initial_step_px: 0.5,
            armijo: 1e-4,
            max_backtracks: 20,
            feature_blur: 1.0,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == Some(0) {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.initial_step_px > 0.0 && self.initial_step_px.is_finite()) {
            return Err(Error::InvalidConfig("step size must be positive".into()));
        }
        if !(self.feature_blur >= 0.0 && self.feature_blur.is_finite()) {
            return Err(Error::InvalidConfig("feature blur must be >= 0".into()));
        }
        if !(self.tol >= 0.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::InvalidConfig("invalid tolerance or Armijo constant".into()));
        }
        Ok(())
    }

    /// Pyramid depth used for a `width × height` image.
    pub fn resolve_levels(&self, width: usize, height: usize) -> usize {
        if let Some(l) = self.levels {
            return l;
        }
        let mut side = width.min(height);
        let mut levels = 1;
        while side.div_ceil(2) >= self.min_coarsest_side {
            side = side.div_ceil(2);
            levels += 1;
        }
        levels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    /// 0 is full resolution.
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegResult {
    pub a_hat: AffineParams,
    /// Objective after every accepted step, coarsest level first; each
    /// level starts with its initial value.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub level_summaries: Vec<LevelSummary>,
}

fn check_stacks(f_ref: &FeatureStack, f_flt: &FeatureStack) -> Result<()> {
    if f_ref.n_channels() != f_flt.n_channels() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} channels, floating has {}",
            f_ref.n_channels(),
            f_flt.n_channels()
        )));
    }
    Ok(())
}

/// Mean squared difference over the overlap, and the overlap size in
/// pixels.
pub fn ssd_objective(
    f_ref: &FeatureStack,
    f_flt: &FeatureStack,
    a: &AffineParams,
) -> Result<(f64, usize)> {
    check_stacks(f_ref, f_flt)?;
    a.validate()?;
    let (w, h) = f_ref.dims();
    let mut sum = 0.0;
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = a.apply(x as f64, y as f64);
            let mut local = 0.0;
            let mut inside = true;
            for (cr, cf) in f_ref.channels.iter().zip(&f_flt.channels) {
                match sample_bilinear(cf, sx, sy) {
                    Some(v) => {
                        let r = v - cr.get(x, y);
                        local += r * r;
                    }
                    None => {
                        inside = false;
                        break;
                    }
                }
            }
            if inside {
                sum += local;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok((sum / (count * f_ref.n_channels()) as f64, count))
}

/// Objective, overlap size and analytic gradient with respect to
/// `(a1, …, a6)`.
pub fn ssd_objective_and_gradient(
    f_ref: &FeatureStack,
    f_flt: &FeatureStack,
    a: &AffineParams,
) -> Result<(f64, usize, [f64; 6])> {
    check_stacks(f_ref, f_flt)?;
    a.validate()?;
    let (w, h) = f_ref.dims();
    let nc = f_ref.n_channels();
    let mut sum = 0.0;
    let mut grad = [0.0; 6];
    let mut count = 0;
    let mut samples = vec![(0.0, 0.0, 0.0); nc];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = a.apply(x as f64, y as f64);
            let mut inside = true;
            for (slot, cf) in samples.iter_mut().zip(&f_flt.channels) {
                match sample_bilinear_with_grad(cf, sx, sy) {
                    Some(s) => *slot = s,
                    None => {
                        inside = false;
                        break;
                    }
                }
            }
            if !inside {
                continue;
            }
            count += 1;
            let (mut rgx, mut rgy) = (0.0, 0.0);
            for (&(v, gx, gy), cr) in samples.iter().zip(&f_ref.channels) {
                let r = v - cr.get(x, y);
                sum += r * r;
                rgx += r * gx;
                rgy += r * gy;
            }
            let (xf, yf) = (x as f64, y as f64);
            grad[0] += rgx * xf;
            grad[1] += rgx * yf;
            grad[2] += rgx;
            grad[3] += rgy * xf;
            grad[4] += rgy * yf;
            grad[5] += rgy;
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    let n = (count * nc) as f64;
    grad.iter_mut().for_each(|g| *g *= 2.0 / n);
    Ok((sum / n, count, grad))
}

pub fn ssd_gradient(f_ref: &FeatureStack, f_flt: &FeatureStack, a: &AffineParams) -> Result<[f64; 6]> {
    ssd_objective_and_gradient(f_ref, f_flt, a).map(|(_, _, g)| g)
}

/// Centered, size-normalized parametrization of one level:
/// `q = (p − c)/s`, parameters `(A, t_n)` with `t_n = (A·c + t − c)/s`.
#[derive(Clone, Copy, Debug)]
struct Frame {
    cx: f64,
    cy: f64,
    s: f64,
}

impl Frame {
    fn new(width: usize, height: usize) -> Self {
        Self {
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            s: width.max(height) as f64 / 2.0,
        }
    }

    fn to_theta(&self, a: &AffineParams) -> [f64; 6] {
        let [a1, a2, a3, a4, a5, a6] = a.params();
        [
            a1,
            a2,
            (a1 * self.cx + a2 * self.cy + a3 - self.cx) / self.s,
            a4,
            a5,
            (a4 * self.cx + a5 * self.cy + a6 - self.cy) / self.s,
        ]
    }

    fn to_affine(&self, t: &[f64; 6]) -> AffineParams {
        AffineParams::new([
            t[0],
            t[1],
            self.s * t[2] - t[0] * self.cx - t[1] * self.cy + self.cx,
            t[3],
            t[4],
            self.s * t[5] - t[3] * self.cx - t[4] * self.cy + self.cy,
        ])
    }

    fn gradient(&self, g: &[f64; 6]) -> [f64; 6] {
        [
            g[0] - g[2] * self.cx,
            g[1] - g[2] * self.cy,
            self.s * g[2],
            g[3] - g[5] * self.cx,
            g[4] - g[5] * self.cy,
            self.s * g[5],
        ]
    }
}

struct LevelOutcome {
    a: AffineParams,
    trace: Vec<f64>,
    summary: LevelSummary,
}

fn descend(
    f_ref: &FeatureStack,
    f_flt: &FeatureStack,
    start: AffineParams,
    cfg: &RegConfig,
    level: usize,
) -> Result<LevelOutcome> {
    let (w, h) = f_ref.dims();
    let frame = Frame::new(w, h);
    let mut theta = frame.to_theta(&start);
    let (mut j, _, g) = ssd_objective_and_gradient(f_ref, f_flt, &start)?;
    if !j.is_finite() {
        return Err(Error::NonFinite { level, iteration: 0 });
    }
    let mut g = frame.gradient(&g);
    let mut trace = vec![j];
    let initial = j;
    // step is in normalized units; one unit is `s` pixels
    let mut step = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if j == 0.0 || gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let gnorm = gnorm2.sqrt();
        let mut eta = step.unwrap_or(cfg.initial_step_px / (frame.s * gnorm));
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let mut trial = theta;
            for k in 0..6 {
                trial[k] -= eta * g[k];
            }
            let a = frame.to_affine(&trial);
            match ssd_objective_and_gradient(f_ref, f_flt, &a) {
                Ok((jt, _, gt)) if jt.is_finite() && jt <= j - cfg.armijo * eta * gnorm2 => {
                    accepted = Some((trial, jt, gt));
                    break;
                }
                Ok(_) | Err(Error::EmptyOverlap) | Err(Error::SingularTransform(_)) => {
                    eta *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        iterations += 1;
        let Some((trial, jt, gt)) = accepted else {
            converged = true;
            break;
        };
        let decrease = (j - jt) / j;
        theta = trial;
        j = jt;
        g = frame.gradient(&gt);
        trace.push(j);
        step = Some(eta * 2.0);
        if decrease < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(LevelOutcome {
        a: frame.to_affine(&theta),
        trace,
        summary: LevelSummary {
            level,
            width: w,
            height: h,
            iterations,
            initial_objective: initial,
            final_objective: j,
            converged,
        },
    })
}

/// Coarse-to-fine registration with a caller-supplied feature extractor
/// applied independently at every pyramid level.
pub fn register_with<F>(
    i_ref: &GrayImage,
    i_flt: &GrayImage,
    cfg: &RegConfig,
    mut features: F,
) -> Result<RegResult>
where
    F: FnMut(&GrayImage) -> Result<FeatureStack>,
{
    cfg.validate()?;
    if i_ref.dims() != i_flt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "reference {:?} and floating {:?} differ in size",
            i_ref.dims(),
            i_flt.dims()
        )));
    }
    let levels = cfg.resolve_levels(i_ref.width(), i_ref.height());
    let p_ref = build_pyramid(i_ref, levels)?;
    let p_flt = build_pyramid(i_flt, levels)?;

    let mut a = AffineParams::IDENTITY;
    let mut trace = Vec::new();
    let mut summaries = Vec::with_capacity(levels);
    let mut converged = true;
    for level in (0..levels).rev() {
        if level + 1 < levels {
            a = a.rescaled(2.0);
        }
        let mut f_ref = features(&p_ref.levels[level])?;
        let mut f_flt = features(&p_flt.levels[level])?;
        if cfg.feature_blur > 0.0 && level > 0 {
            f_ref = f_ref.map_channels(|c| gaussian_blur(c, cfg.feature_blur));
            f_flt = f_flt.map_channels(|c| gaussian_blur(c, cfg.feature_blur));
        }
        let out = descend(&f_ref, &f_flt, a, cfg, level)?;
        a = out.a;
        trace.extend(out.trace);
        converged &= out.summary.converged;
        summaries.push(out.summary);
    }
    Ok(RegResult {
        a_hat: a,
        objective_trace: trace,
        converged,
        level_summaries: summaries,
    })
}

/// Registers `i_flt` onto `i_ref` using phase-congruency feature stacks.
pub fn register(
    i_ref: &GrayImage,
    i_flt: &GrayImage,
    bank: &FilterBank,
    params: &PcParams,
    cfg: &RegConfig,
) -> Result<RegResult> {
    register_with(i_ref, i_flt, cfg, |img| forward(img, bank, params))
}

/// Control variant on raw intensities (a single-channel stack).
pub fn register_intensity(i_ref: &GrayImage, i_flt: &GrayImage, cfg: &RegConfig) -> Result<RegResult> {
    register_with(i_ref, i_flt, cfg, |img| FeatureStack::new(vec![img.clone()]))
}
