//! Synthetic fixtures: the congruent-phase grating, procedural bases and
//! pseudo-multimodal pairs with known affine warps.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{gaussian_blur, sample_bilinear, warp_affine, AffineParams, GrayImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GratingSpec {
    pub width: usize,
    pub height: usize,
    pub n_harmonics: usize,
    /// Phase offset of the first and last row; rows in between are linear.
    pub phase_range: (f64, f64),
}

impl Default for GratingSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 65,
            n_harmonics: 4,
            phase_range: (0.0, PI / 2.0),
        }
    }
}

impl GratingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_harmonics == 0 {
            return Err(Error::InvalidConfig("grating needs at least one harmonic".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("grating must be non-empty".into()));
        }
        Ok(())
    }

    /// Abscissa of column `col`; the columns span `[0, 4π)`.
    pub fn x_of(&self, col: usize) -> f64 {
        4.0 * PI * col as f64 / self.width as f64
    }

    pub fn phase_of(&self, row: usize) -> f64 {
        let (p0, p1) = self.phase_range;
        if self.height == 1 {
            return p0;
        }
        p0 + (p1 - p0) * row as f64 / (self.height - 1) as f64
    }
}

/// Truncated square-wave style series `Σ sin((2s+1)x + φ)/(2s+1)`.
pub fn grating_series(x: f64, phi: f64, n_harmonics: usize) -> f64 {
    (0..n_harmonics)
        .map(|s| {
            let k = (2 * s + 1) as f64;
            (k * x + phi).sin() / k
        })
        .sum()
}

/// The grating image, affinely rescaled to `[0, 1]`.
pub fn grating(spec: &GratingSpec) -> Result<GrayImage> {
    spec.validate()?;
    let img = GrayImage::from_fn(spec.width, spec.height, |x, y| {
        grating_series(spec.x_of(x), spec.phase_of(y), spec.n_harmonics)
    });
    Ok(img.normalized())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Remap {
    Identity,
    Gamma { gamma: f64 },
    Invert,
    /// Piecewise-linear curve through `(input, output)` knots spanning
    /// `[0, 1]`; need not be monotone.
    Piecewise { knots: Vec<(f64, f64)> },
    Posterize { levels: usize },
}

impl Remap {
    pub fn validate(&self) -> Result<()> {
        match self {
            Remap::Gamma { gamma } if !(*gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")))
            }
            Remap::Posterize { levels } if *levels < 2 => {
                Err(Error::InvalidConfig("posterize needs at least 2 levels".into()))
            }
            Remap::Piecewise { knots } => {
                let ok = knots.len() >= 2
                    && knots[0].0 == 0.0
                    && knots[knots.len() - 1].0 == 1.0
                    && knots.windows(2).all(|w| w[1].0 > w[0].0)
                    && knots.iter().all(|&(_, v)| (0.0..=1.0).contains(&v));
                if ok {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(
                        "piecewise knots must increase from 0 to 1 with outputs in [0, 1]".into(),
                    ))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match self {
            Remap::Identity => v,
            Remap::Gamma { gamma } => v.powf(*gamma),
            Remap::Invert => 1.0 - v,
            Remap::Piecewise { knots } => {
                let i = knots.partition_point(|k| k.0 <= v).clamp(1, knots.len() - 1);
                let ((x0, y0), (x1, y1)) = (knots[i - 1], knots[i]);
                y0 + (y1 - y0) * (v - x0) / (x1 - x0)
            }
            Remap::Posterize { levels } => {
                let l = (*levels - 1) as f64;
                (v * l).round() / l
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Remap::Identity => "identity",
            Remap::Gamma { .. } => "gamma",
            Remap::Invert => "invert",
            Remap::Piecewise { .. } => "piecewise",
            Remap::Posterize { .. } => "posterize",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub remap: Remap,
    pub noise_sigma: f64,
}

impl ModalitySpec {
    pub fn new(remap: Remap, noise_sigma: f64) -> Self {
        Self { remap, noise_sigma }
    }

    pub fn validate(&self) -> Result<()> {
        self.remap.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn remap(img: &GrayImage, remap: &Remap) -> Result<GrayImage> {
    remap.validate()?;
    Ok(img.map(|v| remap.apply(v)))
}

#[derive(Clone, Debug)]
pub struct SynthPair {
    pub reference: GrayImage,
    pub floating: GrayImage,
    pub a_gt: AffineParams,
}

/// `I_ref = base`, `I_flt = warp(remap(base), a_gt) + noise`, clamped.
pub fn make_pair<R: Rng>(
    base: &GrayImage,
    modality: &ModalitySpec,
    a_gt: &AffineParams,
    rng: &mut R,
) -> Result<SynthPair> {
    modality.validate()?;
    let remapped = remap(base, &modality.remap)?;
    let (warped, _) = warp_affine(&remapped, a_gt)?;
    let floating = if modality.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, modality.noise_sigma)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let data = warped.data().iter().map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0)).collect();
        GrayImage::new(warped.width(), warped.height(), data)?
    } else {
        warped.clamp01()
    };
    Ok(SynthPair {
        reference: base.clone(),
        floating,
        a_gt: *a_gt,
    })
}

/// Pair cut from a larger `scene`: the reference is the `size × size` window
/// at `origin`, the floating image samples the remapped scene at
/// `origin + a_gt⁻¹(q)`. Unlike [`make_pair`] the floating image has real
/// content everywhere, as a second camera would see, and both sides get
/// independent sensor noise.
pub fn make_pair_in_scene<R: Rng>(
    scene: &GrayImage,
    origin: (usize, usize),
    size: usize,
    modality: &ModalitySpec,
    a_gt: &AffineParams,
    rng: &mut R,
) -> Result<SynthPair> {
    modality.validate()?;
    let mut reference = scene.crop(origin.0, origin.1, size, size)?;
    let remapped = remap(scene, &modality.remap)?;
    let inv = a_gt.inverse()?;
    let (ox, oy) = (origin.0 as f64, origin.1 as f64);
    let noise = if modality.noise_sigma > 0.0 {
        Some(Normal::new(0.0, modality.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let v = sample_bilinear(&remapped, ox + sx, oy + sy).ok_or_else(|| {
                Error::ImageTooSmall(format!(
                    "scene {:?} does not cover the warped window",
                    scene.dims()
                ))
            })?;
            let n = noise.map_or(0.0, |d| d.sample(rng));
            data.push((v + n).clamp(0.0, 1.0));
        }
    }
    if let Some(d) = noise {
        let noisy = reference.data().iter().map(|v| (v + d.sample(rng)).clamp(0.0, 1.0)).collect();
        reference = GrayImage::new(size, size, noisy)?;
    }
    Ok(SynthPair {
        reference,
        floating: GrayImage::new(size, size, data)?,
        a_gt: *a_gt,
    })
}

fn smooth_field<R: Rng>(w: usize, h: usize, sigma: f64, rng: &mut R) -> GrayImage {
    let noise = GrayImage::from_fn(w, h, |_, _| rng.random::<f64>() - 0.5);
    gaussian_blur(&noise, sigma).normalized()
}

/// Multi-octave smoothed noise with overlaid rectangles and disks.
pub fn texture_base<R: Rng>(w: usize, h: usize, rng: &mut R) -> GrayImage {
    let f1 = smooth_field(w, h, 12.0, rng);
    let f2 = smooth_field(w, h, 4.0, rng);
    let f3 = smooth_field(w, h, 1.5, rng);
    let mut data: Vec<f64> = f1
        .data()
        .iter()
        .zip(f2.data())
        .zip(f3.data())
        .map(|((a, b), c)| 0.55 * a + 0.3 * b + 0.15 * c)
        .collect();
    let side = w.min(h) as f64;
    for _ in 0..10 {
        let level: f64 = rng.random();
        let alpha = rng.random_range(0.4..0.8);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let size = rng.random_range(0.05..0.2) * side;
        let disk = rng.random_bool(0.5);
        let aspect = rng.random_range(0.5..2.0);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disk {
                    dx * dx + dy * dy <= size * size
                } else {
                    dx.abs() <= size * aspect && dy.abs() <= size / aspect
                };
                if inside {
                    let v = &mut data[y * w + x];
                    *v = (1.0 - alpha) * *v + alpha * level;
                }
            }
        }
    }
    GrayImage::from_raw(w, h, data).normalized()
}

/// Two crossed congruent-phase gratings whose phase is bent by a smooth
/// random field, so the pattern is not periodic.
pub fn grating_base<R: Rng>(w: usize, h: usize, rng: &mut R) -> GrayImage {
    let bend1 = smooth_field(w, h, 24.0, rng);
    let bend2 = smooth_field(w, h, 24.0, rng);
    let t1 = rng.random_range(0.0..PI);
    let t2 = t1 + rng.random_range(PI / 3.0..2.0 * PI / 3.0);
    let side = w.min(h) as f64;
    let p1 = rng.random_range(0.3..0.45) * side;
    let p2 = rng.random_range(0.22..0.32) * side;
    let img = GrayImage::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let u1 = (xf * t1.cos() + yf * t1.sin()) * 2.0 * PI / p1 + 6.0 * bend1.get(x, y);
        let u2 = (xf * t2.cos() + yf * t2.sin()) * 2.0 * PI / p2 + 6.0 * bend2.get(x, y);
        grating_series(u1, 0.0, 4) + 0.6 * grating_series(u2, PI / 2.0, 4)
    });
    img.normalized()
}

/// Width of the sigmoid rim of [`blob_base`] discs, in pixels.
const BLOB_EDGE: f64 = 1.0;

/// Sum of random soft-edged discs of mixed sign and size.
pub fn blob_base<R: Rng>(w: usize, h: usize, rng: &mut R) -> GrayImage {
    let side = w.min(h) as f64;
    let count = (w * h / 500).max(8);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(0.015..0.05) * side,
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let img = GrayImage::from_fn(w, h, |x, y| {
        blobs
            .iter()
            .map(|&(cx, cy, s, amp)| {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                amp / (1.0 + ((dx.hypot(dy) - s) / BLOB_EDGE).exp())
            })
            .sum()
    });
    img.normalized()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Texture,
    Grating,
    Blobs,
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [BaseKind::Texture, BaseKind::Grating, BaseKind::Blobs];

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Texture => "texture",
            BaseKind::Grating => "grating",
            BaseKind::Blobs => "blobs",
        }
    }

    pub fn generate<R: Rng>(self, w: usize, h: usize, rng: &mut R) -> GrayImage {
        match self {
            BaseKind::Texture => texture_base(w, h, rng),
            BaseKind::Grating => grating_base(w, h, rng),
            BaseKind::Blobs => blob_base(w, h, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    S,
    M,
    L,
}

impl Grade {
    pub const ALL: [Grade; 3] = [Grade::S, Grade::M, Grade::L];

    pub fn transform(self) -> AffineParams {
        AffineParams::new(match self {
            Grade::S => [1.1, 0.1, -10.0, -0.1, 1.1, 10.0],
            Grade::M => [1.15, 0.15, -15.0, -0.15, 1.15, 15.0],
            Grade::L => [1.2, 0.2, -20.0, -0.2, 1.2, 20.0],
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Grade::S => "s",
            Grade::M => "m",
            Grade::L => "l",
        }
    }
}

/// Remaps exercised by the builtin suite.
pub fn suite_remaps() -> [Remap; 4] {
    [
        Remap::Gamma { gamma: 2.2 },
        Remap::Invert,
        Remap::Piecewise {
            knots: vec![(0.0, 0.05), (0.6, 0.95), (0.8, 0.8), (1.0, 0.5)],
        },
        Remap::Posterize { levels: 6 },
    ]
}

pub const SUITE_SIZE: usize = 256;
pub const SUITE_NOISE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub base: BaseKind,
    pub remap: Remap,
    pub grade: Grade,
    pub pair: SynthPair,
}

/// Every base × remap × grade combination at `size × size`, each cut from
/// a scene with a margin of a quarter of the size (at least 48 px) on
/// every side.
pub fn builtin_suite_sized(seed: u64, size: usize) -> Result<Vec<SuiteCase>> {
    let mut specs = Vec::new();
    for (bi, base) in BaseKind::ALL.into_iter().enumerate() {
        for (ri, remap) in suite_remaps().into_iter().enumerate() {
            for (gi, grade) in Grade::ALL.into_iter().enumerate() {
                specs.push((bi * 100 + ri * 10 + gi, base, remap.clone(), grade));
            }
        }
    }
    specs
        .into_par_iter()
        .map(|(idx, base, remap, grade)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let margin = (size / 4).max(48);
            let scene = base.generate(size + 2 * margin, size + 2 * margin, &mut rng);
            let modality = ModalitySpec::new(remap.clone(), SUITE_NOISE);
            let pair = make_pair_in_scene(&scene, (margin, margin), size, &modality, &grade.transform(), &mut rng)?;
            Ok(SuiteCase {
                name: format!("{}_{}_{}", base.name(), remap.name(), grade.name()),
                base,
                remap,
                grade,
                pair,
            })
        })
        .collect()
}

pub fn builtin_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    builtin_suite_sized(seed, SUITE_SIZE)
}

/// `count` aligned (identity-warp) pseudo-multimodal pairs for tuning,
/// cycling through the bases and remaps of the suite.
pub fn aligned_pairs(seed: u64, count: usize, size: usize) -> Result<Vec<(GrayImage, GrayImage)>> {
    let remaps = suite_remaps();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED).wrapping_mul(i as u64 + 1));
            let base = BaseKind::ALL[i % BaseKind::ALL.len()];
            let remap = remaps[(i / BaseKind::ALL.len()) % remaps.len()].clone();
            let scene = base.generate(size, size, &mut rng);
            let modality = ModalitySpec::new(remap, SUITE_NOISE);
            let p = make_pair_in_scene(&scene, (0, 0), size, &modality, &AffineParams::IDENTITY, &mut rng)?;
            Ok((p.reference, p.floating))
        })
        .collect()
}
