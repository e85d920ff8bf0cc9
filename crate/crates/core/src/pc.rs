//! Phase-congruency network.
//!
//! Per orientation `o`, with bank responses `(e_s, o_s)` at scales `s`:
//!
//! ```text
//! A_s  = |(e_s, o_s)|            Φ_s = atan2(o_s, e_s)
//! E    = |(Σe_s, Σo_s)|          Φ̄  = atan2(Σo_s, Σe_s)
//! ΔΦ'_s = cos(Φ_s − Φ̄) − β·|sin(Φ_s − Φ̄)|
//! P_o  = ReLU(Σ_s A_s·ΔΦ'_s − T_o) / (Σ_s A_s + ξ)
//! ```
//!
//! `T_o` is a Rayleigh noise threshold driven by the trainable `α`. Inputs
//! are min-max normalized first, so the output does not change under
//! `γ·I + c` for any `γ > 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{convolve_bank, FilterBank};
use crate::imgcore::{reflect_index, GrayImage};

/// `√(π/2)`: Rayleigh mean per unit scale.
pub const RAYLEIGH_MEAN: f64 = 1.253_314_137_315_500_3;
/// `√((4−π)/2)`: Rayleigh spread per unit scale.
pub const RAYLEIGH_SPREAD: f64 = 0.655_136_377_562_033_6;

/// Lower bound kept on `alpha` by the tuner's projection.
pub const ALPHA_FLOOR: f64 = 1.0 + 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcParams {
    /// Noise-layer geometric factor, must exceed 1.
    pub alpha: f64,
    /// Weight of the `|sin|` phase-deviation penalty, non-negative.
    pub beta: f64,
    /// Small positive guard used in both denominators.
    pub xi: f64,
}

impl Default for PcParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 1.0,
            xi: 1e-4,
        }
    }
}

impl PcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite and > 1, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !(self.xi.is_finite() && self.xi > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "xi must be finite and > 0, got {}",
                self.xi
            )));
        }
        Ok(())
    }
}

/// How the per-orientation noise threshold is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Threshold {
    /// Rayleigh estimate from the finest-scale amplitudes.
    #[default]
    Estimated,
    /// Fixed value for every orientation (0 disables thresholding).
    Fixed(f64),
}

/// Per-orientation feature maps, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub channels: Vec<GrayImage>,
}

impl FeatureStack {
    pub fn new(channels: Vec<GrayImage>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::ShapeMismatch("feature stack needs a channel".into()))?;
        if channels.iter().any(|c| c.dims() != first.dims()) {
            return Err(Error::ShapeMismatch("feature channels differ in size".into()));
        }
        Ok(Self { channels })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    /// Pointwise maximum over channels.
    pub fn channel_max(&self) -> GrayImage {
        let (w, h) = self.dims();
        let mut out = vec![0.0f64; w * h];
        for c in &self.channels {
            for (o, &v) in out.iter_mut().zip(c.data()) {
                *o = o.max(v);
            }
        }
        GrayImage::from_raw(w, h, out)
    }

    pub fn map_channels(&self, f: impl Fn(&GrayImage) -> GrayImage) -> Self {
        Self {
            channels: self.channels.iter().map(f).collect(),
        }
    }
}

/// `(A, Φ)` of a single response pair; `(0, 0)` for a zero pair.
#[inline]
pub fn amplitude_phase_scalar(e: f64, o: f64) -> (f64, f64) {
    if e == 0.0 && o == 0.0 {
        return (0.0, 0.0);
    }
    (e.hypot(o), o.atan2(e))
}

/// Amplitude and phase maps of one scale.
pub fn amplitude_phase(e: &[f64], o: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if e.len() != o.len() {
        return Err(Error::ShapeMismatch(format!(
            "even/odd maps differ: {} vs {}",
            e.len(),
            o.len()
        )));
    }
    Ok(e.iter().zip(o).map(|(&a, &b)| amplitude_phase_scalar(a, b)).unzip())
}

/// Local energy and mean phase over the given `(even, odd)` scale maps.
pub fn local_energy(scales: &[(&[f64], &[f64])]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (first, _) = scales
        .first()
        .ok_or_else(|| Error::InvalidConfig("local energy needs at least one scale".into()))?;
    let n = first.len();
    if scales.iter().any(|(e, o)| e.len() != n || o.len() != n) {
        return Err(Error::ShapeMismatch("scale maps differ in size".into()));
    }
    let mut se = vec![0.0; n];
    let mut so = vec![0.0; n];
    for (e, o) in scales {
        for i in 0..n {
            se[i] += e[i];
            so[i] += o[i];
        }
    }
    Ok(se
        .iter()
        .zip(&so)
        .map(|(&e, &o)| amplitude_phase_scalar(e, o))
        .unzip())
}

/// Modified phase deviation `cos(Φ_s − Φ̄) − β·|sin(Φ_s − Φ̄)|`.
#[inline]
pub fn phase_deviation(phi: f64, mean_phi: f64, beta: f64) -> f64 {
    let d = phi - mean_phi;
    d.cos() - beta * d.sin().abs()
}

/// Same quantity from the raw components, without trigonometry:
/// `cosΔ = (e·ē + o·ō)/(A·E)` and `|sinΔ| = |e·ō − o·ē|/(A·E)`.
/// Zero amplitudes follow the phase-0 convention.
#[inline]
pub fn phase_deviation_components(e: f64, o: f64, sum_e: f64, sum_o: f64, beta: f64) -> f64 {
    let (e, o) = if e == 0.0 && o == 0.0 { (1.0, 0.0) } else { (e, o) };
    let (se, so) = if sum_e == 0.0 && sum_o == 0.0 {
        (1.0, 0.0)
    } else {
        (sum_e, sum_o)
    };
    let norm = e.hypot(o) * se.hypot(so);
    ((e * se + o * so) - beta * (e * so - o * se).abs()) / norm
}

/// Rayleigh noise model of one orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseEstimate {
    pub tau: f64,
    pub v_g: f64,
    pub m_r: f64,
    pub v_r: f64,
    /// `m_r + v_r`, broadcast over the whole orientation channel.
    pub threshold: f64,
}

/// Noise model from a given Rayleigh scale `tau`.
pub fn noise_from_tau(tau: f64, n_scales: usize, params: &PcParams) -> Result<NoiseEstimate> {
    if !(params.alpha.is_finite() && params.alpha > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be > 1, got {}",
            params.alpha
        )));
    }
    let inv = 1.0 / params.alpha;
    let v_g = tau * (1.0 - inv.powi(n_scales as i32)) / (1.0 - inv + params.xi);
    let m_r = RAYLEIGH_MEAN * v_g;
    let v_r = RAYLEIGH_SPREAD * v_g;
    Ok(NoiseEstimate {
        tau,
        v_g,
        m_r,
        v_r,
        threshold: m_r + v_r,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (_, &mut hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Estimates `tau = median(A_finest)/√(ln 4)` and derives the threshold.
pub fn noise_threshold(
    finest_amplitude: &[f64],
    n_scales: usize,
    params: &PcParams,
) -> Result<NoiseEstimate> {
    if finest_amplitude.is_empty() {
        return Err(Error::ShapeMismatch("empty amplitude map".into()));
    }
    let tau = median(finest_amplitude) / 4f64.ln().sqrt();
    noise_from_tau(tau, n_scales, params)
}

/// Feature maps with the estimated noise threshold.
pub fn forward(img: &GrayImage, bank: &FilterBank, params: &PcParams) -> Result<FeatureStack> {
    forward_with(img, bank, params, Threshold::Estimated)
}

pub fn forward_with(
    img: &GrayImage,
    bank: &FilterBank,
    params: &PcParams,
    threshold: Threshold,
) -> Result<FeatureStack> {
    params.validate()?;
    let input = img.normalized();
    let resp = convolve_bank(&input, bank)?;
    let (w, h) = (resp.width, resp.height);
    let n = w * h;
    let ns = resp.n_scales;
    let channels = (0..resp.n_orientations)
        .into_par_iter()
        .map(|o| -> Result<GrayImage> {
            let mut sum_e = vec![0.0; n];
            let mut sum_o = vec![0.0; n];
            let mut sum_a = vec![0.0; n];
            for s in 0..ns {
                let (e, od) = (resp.even(s, o), resp.odd(s, o));
                for i in 0..n {
                    sum_e[i] += e[i];
                    sum_o[i] += od[i];
                    sum_a[i] += e[i].hypot(od[i]);
                }
            }
            let t = match threshold {
                Threshold::Fixed(t) => t,
                Threshold::Estimated => {
                    let a0: Vec<f64> = resp
                        .even(0, o)
                        .iter()
                        .zip(resp.odd(0, o))
                        .map(|(e, od)| e.hypot(*od))
                        .collect();
                    noise_threshold(&a0, ns, params)?.threshold
                }
            };
            let mut out = vec![0.0; n];
            for i in 0..n {
                let (se, so) = (sum_e[i], sum_o[i]);
                let energy = se.hypot(so);
                // A_s·cosΔ and A_s·|sinΔ| summed over scales
                let (mut cos_term, mut sin_term) = (0.0, 0.0);
                if energy > 0.0 {
                    for s in 0..ns {
                        let (e, od) = (resp.even(s, o)[i], resp.odd(s, o)[i]);
                        cos_term += e * se + od * so;
                        sin_term += (e * so - od * se).abs();
                    }
                    cos_term /= energy;
                    sin_term /= energy;
                } else {
                    for s in 0..ns {
                        cos_term += resp.even(s, o)[i];
                        sin_term += resp.odd(s, o)[i].abs();
                    }
                }
                let num = (cos_term - params.beta * sin_term - t).max(0.0);
                out[i] = (num / (sum_a[i] + params.xi)).clamp(0.0, 1.0);
            }
            Ok(GrayImage::from_raw(w, h, out))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(channels)
}

/// Classical phase-congruency variants used as an oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcVariant {
    /// `Σ A_s cos(Φ_s − Φ̄) / (Σ A_s + ξ)`
    Pc0,
    /// `Σ A_s (cos(Φ_s − Φ̄) − |sin(Φ_s − Φ̄)|) / (Σ A_s + ξ)`
    Pc1,
}

/// Pixel-by-pixel evaluation of [`PcVariant`] on the normalized input, with
/// its own direct filtering and explicit angles. No thresholding and no
/// clamping; slow, meant for checking [`forward_with`].
pub fn reference_pc(
    img: &GrayImage,
    bank: &FilterBank,
    xi: f64,
    variant: PcVariant,
) -> Result<Vec<GrayImage>> {
    let k = bank.largest_kernel();
    let (w, h) = img.dims();
    if w <= k || h <= k {
        return Err(Error::ImageTooSmall(format!(
            "{w}x{h} image is not larger than the {k}x{k} kernel"
        )));
    }
    let input = img.normalized();
    let cfg = bank.config();
    let beta = match variant {
        PcVariant::Pc0 => 0.0,
        PcVariant::Pc1 => 1.0,
    };
    let mut maps = Vec::with_capacity(cfg.n_orientations);
    for o in 0..cfg.n_orientations {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut resp = Vec::with_capacity(cfg.n_scales());
                for s in 0..cfg.n_scales() {
                    let (ke, ko) = (bank.even(s, o), bank.odd(s, o));
                    let r = ke.radius() as isize;
                    let (mut e, mut od) = (0.0, 0.0);
                    for i in -r..=r {
                        for j in -r..=r {
                            let v = input.get(
                                reflect_index(x as isize + j, w),
                                reflect_index(y as isize + i, h),
                            );
                            let (ki, kj) = ((i + r) as usize, (j + r) as usize);
                            e += ke.at(ki, kj) * v;
                            od += ko.at(ki, kj) * v;
                        }
                    }
                    resp.push((e, od));
                }
                let se: f64 = resp.iter().map(|r| r.0).sum();
                let so: f64 = resp.iter().map(|r| r.1).sum();
                let (_, mean_phi) = amplitude_phase_scalar(se, so);
                let mut num = 0.0;
                let mut den = xi;
                for &(e, od) in &resp {
                    let (a, phi) = amplitude_phase_scalar(e, od);
                    num += a * phase_deviation(phi, mean_phi, beta);
                    den += a;
                }
                out[y * w + x] = num / den;
            }
        }
        maps.push(GrayImage::new(w, h, out)?);
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gabor::BankConfig;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    #[test]
    fn amplitude_phase_cases() {
        let (a, p) = amplitude_phase(&[3.0, 1.0, 0.0], &[4.0, 0.0, 0.0]).unwrap();
        assert_eq!(a, vec![5.0, 1.0, 0.0]);
        assert!((p[0] - 4f64.atan2(3.0)).abs() < 1e-15);
        assert!((p[0] - 0.9273).abs() < 1e-4);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 0.0);
        assert!(amplitude_phase(&[1.0], &[]).is_err());
    }

    #[test]
    fn local_energy_cases() {
        let (e, p) = local_energy(&[(&[3.0], &[4.0])]).unwrap();
        assert_eq!(e[0], 5.0);
        assert!((p[0] - 4f64.atan2(3.0)).abs() < 1e-15);

        let (e, p2) = local_energy(&[(&[3.0], &[4.0]), (&[3.0], &[4.0])]).unwrap();
        assert_eq!(e[0], 10.0);
        assert!((p2[0] - p[0]).abs() < 1e-15);

        let (e, _) = local_energy(&[(&[0.7], &[-0.2]), (&[-0.7], &[0.2])]).unwrap();
        assert_eq!(e[0], 0.0);
        assert!(local_energy(&[]).is_err());
    }

    #[test]
    fn phase_deviation_cases() {
        for beta in [0.0, 0.5, 1.0, 3.0] {
            assert_eq!(phase_deviation(0.4, 0.4, beta), 1.0);
        }
        assert!((phase_deviation(FRAC_PI_2, 0.0, 1.0) + 1.0).abs() < 1e-15);
        assert!((phase_deviation(FRAC_PI_4, 0.0, 0.0) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn component_form_matches_trig_form() {
        let cases = [
            (0.3, -0.8, 1.1, 0.4),
            (-2.0, 0.1, -0.5, -0.5),
            (0.0, 1.0, 1.0, 0.0),
            (1e-3, 2e-3, -4.0, 1.0),
        ];
        for (e, o, se, so) in cases {
            for beta in [0.0, 0.7, 1.0] {
                let (_, phi) = amplitude_phase_scalar(e, o);
                let (_, mphi) = amplitude_phase_scalar(se, so);
                let trig = phase_deviation(phi, mphi, beta);
                let alg = phase_deviation_components(e, o, se, so, beta);
                assert!((trig - alg).abs() < 1e-9, "{trig} vs {alg}");
            }
        }
    }

    #[test]
    fn noise_hand_values() {
        let p = PcParams {
            alpha: 2.0,
            beta: 1.0,
            xi: 0.0,
        };
        let n = noise_from_tau(1.0, 4, &p).unwrap();
        assert!((n.v_g - 1.875).abs() < 1e-15);
        assert!((n.threshold - 3.578).abs() < 1e-3);
        assert!((n.m_r - (PI / 2.0).sqrt() * n.v_g).abs() < 1e-15);
        assert!((n.v_r - ((4.0 - PI) / 2.0).sqrt() * n.v_g).abs() < 1e-15);

        let z = noise_from_tau(0.0, 4, &p).unwrap();
        assert_eq!(z.threshold, 0.0);

        let big = PcParams {
            alpha: 1e12,
            xi: 1e-4,
            ..p
        };
        let lim = noise_from_tau(1.0, 4, &big).unwrap();
        assert!((lim.v_g - 1.0 / (1.0 + 1e-4)).abs() < 1e-9);

        assert!(noise_from_tau(1.0, 4, &PcParams { alpha: 1.0, ..p }).is_err());
        assert!(noise_from_tau(1.0, 4, &PcParams { alpha: 0.5, ..p }).is_err());
    }

    #[test]
    fn median_estimator() {
        let n = noise_threshold(&[1.0, 5.0, 3.0, 2.0], 4, &PcParams::default()).unwrap();
        assert!((n.tau - 2.5 / 4f64.ln().sqrt()).abs() < 1e-15);
        let n = noise_threshold(&[4.0, 1.0, 9.0], 4, &PcParams::default()).unwrap();
        assert!((n.tau - 4.0 / 4f64.ln().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_image_has_no_features() {
        let bank = FilterBank::new(BankConfig::default()).unwrap();
        let f = forward(&GrayImage::filled(40, 40, 0.6), &bank, &PcParams::default()).unwrap();
        assert_eq!(f.n_channels(), 6);
        assert!(f.channels.iter().all(|c| c.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_scale_pc0_is_one() {
        let cfg = BankConfig {
            n_orientations: 2,
            kernel_sizes: vec![7],
            wavevector_magnitudes: vec![2.0 * PI / 4.0],
            ..BankConfig::default()
        };
        let bank = FilterBank::new(cfg).unwrap();
        let img = GrayImage::from_fn(20, 20, |x, y| ((x * 7 + y * 3) % 5) as f64 / 4.0);
        let xi = 1e-4;
        let maps = reference_pc(&img, &bank, xi, PcVariant::Pc0).unwrap();
        let resp = convolve_bank(&img.normalized(), &bank).unwrap();
        for (o, m) in maps.iter().enumerate() {
            for i in 0..400 {
                let a = resp.even(0, o)[i].hypot(resp.odd(0, o)[i]);
                if a > 100.0 * xi {
                    assert!((m.data()[i] - a / (a + xi)).abs() < 1e-9);
                    assert!(m.data()[i] > 0.99);
                }
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(PcParams::default().validate().is_ok());
        for p in [
            PcParams { alpha: 1.0, ..Default::default() },
            PcParams { beta: -0.1, ..Default::default() },
            PcParams { xi: 0.0, ..Default::default() },
        ] {
            assert!(p.validate().is_err());
        }
    }
}
