//! Modified learnable Gabor bank.
//!
//! Each (scale, orientation) cell holds a fixed quadrature pair sampled from
//! the complex Gabor wavelet
//!
//! ```text
//! G(z) = (|k|²/σ²) · exp(-|k|²|z|²/(2σ²)) · (exp(i k·z) - exp(-σ²/2))
//! ```
//!
//! (real part = even kernel, imaginary part = odd kernel), each made
//! zero-mean. Learnable modulation kernels of the same size multiply the
//! fixed taps elementwise; the product is re-centered to zero mean so the
//! bank never responds to a constant offset, whatever the modulation.
//!
//! Filtering is cross-correlation (`out(p) = Σ_q K(q)·I(p + q)`) with
//! reflect-101 border padding, stride 1, output the size of the input.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{reflect_index, GrayImage};

/// Layout and wavelet parameters of the bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub n_orientations: usize,
    /// Odd, strictly increasing kernel widths, one per scale.
    pub kernel_sizes: Vec<usize>,
    /// Envelope parameter σ of the wavelet (dimensionless).
    pub sigma: f64,
    /// `|k|` per scale, in radians per pixel, finest first.
    pub wavevector_magnitudes: Vec<f64>,
    /// Ratio between successive wavelengths.
    pub scale_factor: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self::with_layout(6, vec![7, 13, 19, 25])
    }
}

impl BankConfig {
    pub const DEFAULT_MIN_WAVELENGTH: f64 = 3.0;
    pub const DEFAULT_SIGMA: f64 = std::f64::consts::PI;
    pub const DEFAULT_SCALE_FACTOR: f64 = 2.0;

    /// Default wavelet parameters for the given orientation count and kernel
    /// sizes: finest wavelength 3 px, doubling per scale, σ = π.
    pub fn with_layout(n_orientations: usize, kernel_sizes: Vec<usize>) -> Self {
        let n = kernel_sizes.len();
        Self {
            n_orientations,
            kernel_sizes,
            sigma: Self::DEFAULT_SIGMA,
            wavevector_magnitudes: geometric_wavevectors(
                Self::DEFAULT_MIN_WAVELENGTH,
                Self::DEFAULT_SCALE_FACTOR,
                n,
            ),
            scale_factor: Self::DEFAULT_SCALE_FACTOR,
        }
    }

    pub fn n_scales(&self) -> usize {
        self.kernel_sizes.len()
    }

    /// Number of (scale, orientation) cells.
    pub fn n_cells(&self) -> usize {
        self.n_scales() * self.n_orientations
    }

    #[inline]
    pub fn cell(&self, scale: usize, orientation: usize) -> usize {
        scale * self.n_orientations + orientation
    }

    /// Orientation angle of the wavevector, `o·π/N_o`.
    pub fn orientation_angle(&self, orientation: usize) -> f64 {
        orientation as f64 * std::f64::consts::PI / self.n_orientations as f64
    }

    pub fn wavelength(&self, scale: usize) -> f64 {
        2.0 * std::f64::consts::PI / self.wavevector_magnitudes[scale]
    }

    /// Number of learnable modulation taps (even and odd kernels).
    pub fn modulation_len(&self) -> usize {
        2 * self.n_orientations * self.kernel_sizes.iter().map(|k| k * k).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_orientations == 0 {
            return bad("at least one orientation required".into());
        }
        if self.kernel_sizes.is_empty() {
            return bad("at least one scale required".into());
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return bad(format!("kernel size {k} is even"));
        }
        if self.kernel_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return bad("kernel sizes must be strictly increasing".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.wavevector_magnitudes.len() != self.kernel_sizes.len() {
            return bad("one wavevector magnitude per scale required".into());
        }
        if self
            .wavevector_magnitudes
            .iter()
            .any(|k| !(k.is_finite() && *k > 0.0))
        {
            return bad("wavevector magnitudes must be positive".into());
        }
        for w in self.wavevector_magnitudes.windows(2) {
            if ((w[0] / w[1]) - self.scale_factor).abs() > 1e-9 * self.scale_factor {
                return bad(format!(
                    "successive wavevectors must differ by factor {}",
                    self.scale_factor
                ));
            }
        }
        Ok(())
    }
}

fn geometric_wavevectors(min_wavelength: f64, factor: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|s| 2.0 * std::f64::consts::PI / (min_wavelength * factor.powi(s as i32)))
        .collect()
}

/// Square kernel, row-major, odd side.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub taps: Vec<f64>,
}

impl Kernel {
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    fn recentered(mut self) -> Self {
        let mean = self.sum() / self.taps.len() as f64;
        self.taps.iter_mut().for_each(|t| *t -= mean);
        self
    }
}

/// Learnable modulation taps, one even and one odd kernel per cell, indexed
/// by [`BankConfig::cell`].
#[derive(Clone, Debug, PartialEq)]
pub struct Modulation {
    pub even: Vec<Vec<f64>>,
    pub odd: Vec<Vec<f64>>,
}

impl Modulation {
    pub fn ones(cfg: &BankConfig) -> Self {
        Self::filled(cfg, 1.0)
    }

    pub fn filled(cfg: &BankConfig, value: f64) -> Self {
        let cells: Vec<Vec<f64>> = (0..cfg.n_scales())
            .flat_map(|s| {
                let n = cfg.kernel_sizes[s] * cfg.kernel_sizes[s];
                (0..cfg.n_orientations).map(move |_| vec![value; n])
            })
            .collect();
        Self {
            even: cells.clone(),
            odd: cells,
        }
    }

    /// Total number of taps.
    pub fn len(&self) -> usize {
        self.even.iter().chain(&self.odd).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens even cells then odd cells, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.even.iter().chain(&self.odd).flatten().copied().collect()
    }

    pub fn unflatten(cfg: &BankConfig, flat: &[f64]) -> Result<Self> {
        if flat.len() != cfg.modulation_len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} modulation taps, got {}",
                cfg.modulation_len(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        let mut take = || -> Vec<Vec<f64>> {
            (0..cfg.n_cells())
                .map(|c| {
                    let k = cfg.kernel_sizes[c / cfg.n_orientations];
                    it.by_ref().take(k * k).collect()
                })
                .collect()
        };
        let even = take();
        let odd = take();
        Ok(Self { even, odd })
    }

    fn check(&self, cfg: &BankConfig) -> Result<()> {
        for (name, cells) in [("even", &self.even), ("odd", &self.odd)] {
            if cells.len() != cfg.n_cells() {
                return Err(Error::ShapeMismatch(format!(
                    "{name} modulation has {} cells, bank has {}",
                    cells.len(),
                    cfg.n_cells()
                )));
            }
            for (c, w) in cells.iter().enumerate() {
                let k = cfg.kernel_sizes[c / cfg.n_orientations];
                if w.len() != k * k {
                    return Err(Error::ShapeMismatch(format!(
                        "{name} modulation cell {c} has {} taps, expected {}",
                        w.len(),
                        k * k
                    )));
                }
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::ShapeMismatch(format!(
                        "{name} modulation cell {c} has non-finite taps"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FilterBank {
    config: BankConfig,
    wavelet_even: Vec<Kernel>,
    wavelet_odd: Vec<Kernel>,
    modulation: Modulation,
    effective_even: Vec<Kernel>,
    effective_odd: Vec<Kernel>,
}

/// Samples the complex wavelet on the integer grid centered on the kernel
/// midpoint; returns (real, imaginary) parts before any DC removal.
pub fn sample_wavelet(cfg: &BankConfig, scale: usize, orientation: usize) -> (Kernel, Kernel) {
    let size = cfg.kernel_sizes[scale];
    let r = (size / 2) as f64;
    let k = cfg.wavevector_magnitudes[scale];
    let theta = cfg.orientation_angle(orientation);
    let (kx, ky) = (k * theta.cos(), k * theta.sin());
    let s2 = cfg.sigma * cfg.sigma;
    let gain = k * k / s2;
    let dc = (-s2 / 2.0).exp();
    let mut re = Vec::with_capacity(size * size);
    let mut im = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let (x, y) = (col as f64 - r, row as f64 - r);
            let env = gain * (-k * k * (x * x + y * y) / (2.0 * s2)).exp();
            let phase = kx * x + ky * y;
            re.push(env * (phase.cos() - dc));
            im.push(env * phase.sin());
        }
    }
    (Kernel { size, taps: re }, Kernel { size, taps: im })
}

impl FilterBank {
    /// Builds the fixed zero-mean wavelets and an all-ones modulation.
    pub fn new(config: BankConfig) -> Result<Self> {
        config.validate()?;
        let mut wavelet_even = Vec::with_capacity(config.n_cells());
        let mut wavelet_odd = Vec::with_capacity(config.n_cells());
        for s in 0..config.n_scales() {
            for o in 0..config.n_orientations {
                let (re, im) = sample_wavelet(&config, s, o);
                wavelet_even.push(re.recentered());
                wavelet_odd.push(im.recentered());
            }
        }
        let modulation = Modulation::ones(&config);
        let mut bank = Self {
            effective_even: wavelet_even.clone(),
            effective_odd: wavelet_odd.clone(),
            config,
            wavelet_even,
            wavelet_odd,
            modulation,
        };
        bank.refresh();
        Ok(bank)
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn modulation(&self) -> &Modulation {
        &self.modulation
    }

    /// Fixed (unmodulated, DC-removed) even wavelet of a cell.
    pub fn wavelet_even(&self, scale: usize, orientation: usize) -> &Kernel {
        &self.wavelet_even[self.config.cell(scale, orientation)]
    }

    pub fn wavelet_odd(&self, scale: usize, orientation: usize) -> &Kernel {
        &self.wavelet_odd[self.config.cell(scale, orientation)]
    }

    /// Kernel actually applied to images: wavelet ∘ modulation, re-centered.
    pub fn even(&self, scale: usize, orientation: usize) -> &Kernel {
        &self.effective_even[self.config.cell(scale, orientation)]
    }

    pub fn odd(&self, scale: usize, orientation: usize) -> &Kernel {
        &self.effective_odd[self.config.cell(scale, orientation)]
    }

    pub fn largest_kernel(&self) -> usize {
        *self.config.kernel_sizes.last().unwrap()
    }

    /// Returns a bank with the given modulation applied.
    pub fn with_modulation(&self, modulation: Modulation) -> Result<Self> {
        modulation.check(&self.config)?;
        let mut bank = self.clone();
        bank.modulation = modulation;
        bank.refresh();
        Ok(bank)
    }

    fn refresh(&mut self) {
        let modulate = |wavelets: &[Kernel], weights: &[Vec<f64>]| -> Vec<Kernel> {
            wavelets
                .iter()
                .zip(weights)
                .map(|(k, w)| {
                    Kernel {
                        size: k.size,
                        taps: k.taps.iter().zip(w).map(|(a, b)| a * b).collect(),
                    }
                    .recentered()
                })
                .collect()
        };
        self.effective_even = modulate(&self.wavelet_even, &self.modulation.even);
        self.effective_odd = modulate(&self.wavelet_odd, &self.modulation.odd);
    }
}

/// Even and odd responses of every bank cell, each `width × height`.
#[derive(Clone, Debug)]
pub struct QuadratureResponses {
    pub width: usize,
    pub height: usize,
    pub n_scales: usize,
    pub n_orientations: usize,
    even: Vec<Vec<f64>>,
    odd: Vec<Vec<f64>>,
}

impl QuadratureResponses {
    pub fn even(&self, scale: usize, orientation: usize) -> &[f64] {
        &self.even[scale * self.n_orientations + orientation]
    }

    pub fn odd(&self, scale: usize, orientation: usize) -> &[f64] {
        &self.odd[scale * self.n_orientations + orientation]
    }
}

/// Reflect-padded copy of `img` with `pad` extra pixels on every side.
fn pad_reflect(img: &GrayImage, pad: usize) -> (Vec<f64>, usize) {
    let (w, h) = img.dims();
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let mut out = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        let sy = reflect_index(py as isize - pad as isize, h);
        let row = img.row(sy);
        for px in 0..pw {
            out.push(row[reflect_index(px as isize - pad as isize, w)]);
        }
    }
    (out, pw)
}

fn correlate_pair(
    padded: &[f64],
    pw: usize,
    pad: usize,
    w: usize,
    h: usize,
    even: &Kernel,
    odd: &Kernel,
) -> (Vec<f64>, Vec<f64>) {
    let r = even.radius();
    let size = even.size;
    let off = pad - r;
    let mut out_e = vec![0.0; w * h];
    let mut out_o = vec![0.0; w * h];
    for y in 0..h {
        let oe = &mut out_e[y * w..(y + 1) * w];
        let oo = &mut out_o[y * w..(y + 1) * w];
        for i in 0..size {
            let base = (y + off + i) * pw + off;
            for j in 0..size {
                let ke = even.taps[i * size + j];
                let ko = odd.taps[i * size + j];
                let src = &padded[base + j..base + j + w];
                for ((e, o), &s) in oe.iter_mut().zip(oo.iter_mut()).zip(src) {
                    *e += ke * s;
                    *o += ko * s;
                }
            }
        }
    }
    (out_e, out_o)
}

/// Filters `img` with every cell of the bank.
pub fn convolve_bank(img: &GrayImage, bank: &FilterBank) -> Result<QuadratureResponses> {
    let k = bank.largest_kernel();
    let (w, h) = img.dims();
    if w <= k || h <= k {
        return Err(Error::ImageTooSmall(format!(
            "{w}x{h} image is not larger than the {k}x{k} kernel"
        )));
    }
    let cfg = bank.config();
    let pad = k / 2;
    let (padded, pw) = pad_reflect(img, pad);
    let (even, odd): (Vec<_>, Vec<_>) = (0..cfg.n_cells())
        .into_par_iter()
        .map(|c| {
            correlate_pair(
                &padded,
                pw,
                pad,
                w,
                h,
                &bank.effective_even[c],
                &bank.effective_odd[c],
            )
        })
        .unzip();
    Ok(QuadratureResponses {
        width: w,
        height: h,
        n_scales: cfg.n_scales(),
        n_orientations: cfg.n_orientations,
        even,
        odd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bank() -> FilterBank {
        FilterBank::new(BankConfig::default()).unwrap()
    }

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random())
    }

    /// Direct per-pixel correlation with explicit reflect indexing.
    fn naive(img: &GrayImage, k: &Kernel) -> Vec<f64> {
        let (w, h) = img.dims();
        let r = k.radius() as isize;
        let mut out = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for i in -r..=r {
                    for j in -r..=r {
                        let sy = reflect_index(y + i, h);
                        let sx = reflect_index(x + j, w);
                        acc += k.at((i + r) as usize, (j + r) as usize) * img.get(sx, sy);
                    }
                }
                out[(y as usize) * w + x as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn default_layout() {
        let cfg = BankConfig::default();
        assert_eq!(cfg.n_scales(), 4);
        assert_eq!(cfg.n_orientations, 6);
        assert_eq!(cfg.kernel_sizes, vec![7, 13, 19, 25]);
        assert_eq!(cfg.modulation_len(), 2 * 6 * (49 + 169 + 361 + 625));
        for s in 1..4 {
            assert!((cfg.wavelength(s) / cfg.wavelength(s - 1) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = BankConfig::default();
        cfg.kernel_sizes[1] = 12;
        assert!(FilterBank::new(cfg).is_err());
        let mut cfg = BankConfig::default();
        cfg.sigma = 0.0;
        assert!(FilterBank::new(cfg).is_err());
        let mut cfg = BankConfig::default();
        cfg.kernel_sizes.swap(0, 1);
        assert!(FilterBank::new(cfg).is_err());
        let mut cfg = BankConfig::default();
        cfg.wavevector_magnitudes[2] *= 1.1;
        assert!(FilterBank::new(cfg).is_err());
    }

    #[test]
    fn even_symmetric_odd_antisymmetric() {
        let b = bank();
        for s in 0..4 {
            for o in 0..6 {
                let e = b.wavelet_even(s, o);
                let d = b.wavelet_odd(s, o);
                let n = e.size;
                for i in 0..n {
                    for j in 0..n {
                        assert!((e.at(i, j) - e.at(n - 1 - i, n - 1 - j)).abs() < 1e-12);
                        assert!((d.at(i, j) + d.at(n - 1 - i, n - 1 - j)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn modified_kernels_are_dc_free() {
        let b = bank();
        for s in 0..4 {
            for o in 0..6 {
                assert!(b.even(s, o).sum().abs() < 1e-9);
                assert!(b.odd(s, o).sum().abs() < 1e-9);
                let n = b.even(s, o).taps.len() as f64;
                assert!((b.even(s, o).sum() / n).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn constant_image_gives_no_response() {
        let b = bank();
        let r = convolve_bank(&GrayImage::filled(48, 40, 0.8), &b).unwrap();
        for s in 0..4 {
            for o in 0..6 {
                assert!(r.even(s, o).iter().chain(r.odd(s, o)).all(|v| v.abs() < 1e-6));
            }
        }
    }

    #[test]
    fn matches_direct_correlation() {
        let b = bank();
        let img = random_image(31, 29, 1);
        let r = convolve_bank(&img, &b).unwrap();
        for s in [0, 3] {
            for o in [0, 4] {
                let e = naive(&img, b.even(s, o));
                let d = naive(&img, b.odd(s, o));
                for i in 0..e.len() {
                    assert!((e[i] - r.even(s, o)[i]).abs() < 1e-12);
                    assert!((d[i] - r.odd(s, o)[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_reproduces_flipped_kernel() {
        let b = bank();
        let (w, h) = (41, 41);
        let img = GrayImage::from_fn(w, h, |x, y| if (x, y) == (20, 20) { 1.0 } else { 0.0 });
        let r = convolve_bank(&img, &b).unwrap();
        for s in 0..4 {
            let k = b.odd(s, 1);
            let rad = k.radius();
            for i in 0..k.size {
                for j in 0..k.size {
                    let (y, x) = (20 + rad - i, 20 + rad - j);
                    assert!((r.odd(s, 1)[y * w + x] - k.at(i, j)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn oriented_sinusoid_selects_matching_channel() {
        let b = bank();
        let lambda = b.config().wavelength(0);
        let img = GrayImage::from_fn(64, 64, |x, _| {
            0.5 + 0.5 * (2.0 * std::f64::consts::PI * x as f64 / lambda).cos()
        });
        let r = convolve_bank(&img, &b).unwrap();
        let amp = |o: usize| {
            let i = 32 * 64 + 32;
            r.even(0, o)[i].hypot(r.odd(0, o)[i])
        };
        let a0 = amp(0);
        for o in 1..6 {
            assert!(a0 >= 3.0 * amp(o), "o={o}: {a0} vs {}", amp(o));
        }
    }

    #[test]
    fn modulation_identity_zero_and_scaling() {
        let b = bank();
        let img = random_image(40, 36, 9);
        let base = convolve_bank(&img, &b).unwrap();

        let ones = b.with_modulation(Modulation::ones(b.config())).unwrap();
        for c in 0..24 {
            assert_eq!(ones.effective_even[c], b.effective_even[c]);
        }

        let zero = b.with_modulation(Modulation::filled(b.config(), 0.0)).unwrap();
        let rz = convolve_bank(&img, &zero).unwrap();
        assert!(rz.even.iter().chain(&rz.odd).flatten().all(|&v| v == 0.0));

        let twice = b.with_modulation(Modulation::filled(b.config(), 2.0)).unwrap();
        let r2 = convolve_bank(&img, &twice).unwrap();
        for (a, c) in base.even.iter().flatten().zip(r2.even.iter().flatten()) {
            assert!((2.0 * a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn modulation_shape_is_checked() {
        let b = bank();
        let mut m = Modulation::ones(b.config());
        m.odd[3].pop();
        assert!(matches!(b.with_modulation(m), Err(Error::ShapeMismatch(_))));
        assert!(Modulation::unflatten(b.config(), &[1.0; 10]).is_err());
    }

    #[test]
    fn random_modulation_stays_dc_free() {
        let b = bank();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flat: Vec<f64> = (0..b.config().modulation_len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let m = Modulation::unflatten(b.config(), &flat).unwrap();
        assert_eq!(m.flatten(), flat);
        let bm = b.with_modulation(m).unwrap();
        for c in 0..24 {
            assert!(bm.effective_even[c].sum().abs() < 1e-9);
            assert!(bm.effective_odd[c].sum().abs() < 1e-9);
        }
    }

    #[test]
    fn too_small_image_fails() {
        let b = bank();
        assert!(convolve_bank(&GrayImage::filled(25, 60, 0.0), &b).is_err());
        assert!(convolve_bank(&GrayImage::filled(26, 26, 0.0), &b).is_ok());
    }
}
