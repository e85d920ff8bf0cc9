//! Fitting `alpha`, `beta` and the bank modulation on aligned pairs.
//!
//! Both sides of a pair go through the same network and the mean
//! similarity loss over a batch is minimized with two-point simultaneous
//! perturbation stochastic approximation (SPSA). Only forward passes are
//! needed, which keeps the ~1.4e4-dimensional modulation tractable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{FilterBank, Modulation};
use crate::imgcore::GrayImage;
use crate::metrics::{similarity_loss, LossConfig};
use crate::pc::{forward, PcParams, ALPHA_FLOOR};

/// Consecutive rejected steps before tuning gives up.
pub const MAX_REJECTIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Augmentation {
    /// Additive offset drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    /// Gain drawn log-uniformly from `[1/(1+contrast), 1+contrast]`.
    pub contrast: f64,
    /// Exponent drawn log-uniformly from `[1/(1+gamma), 1+gamma]`.
    pub gamma: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            brightness: 0.1,
            contrast: 0.25,
            gamma: 0.25,
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            gamma: 0.0,
        }
    }

    fn is_none(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 0.0 && self.gamma == 0.0
    }

    fn apply<R: Rng>(&self, img: GrayImage, rng: &mut R) -> GrayImage {
        if self.is_none() {
            return img;
        }
        let log_uniform = |rng: &mut R, r: f64| {
            if r == 0.0 {
                1.0
            } else {
                let l = (1.0 + r).ln();
                rng.random_range(-l..=l).exp()
            }
        };
        let g = log_uniform(rng, self.gamma);
        let k = log_uniform(rng, self.contrast);
        let b = if self.brightness == 0.0 {
            0.0
        } else {
            rng.random_range(-self.brightness..=self.brightness)
        };
        img.map(|v| (k * (v.clamp(0.0, 1.0).powf(g) - 0.5) + 0.5 + b).clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    /// Pairs in the fixed validation batch.
    pub val_size: usize,
    pub iterations: usize,
    /// Target size of the first update, in scaled parameter units; the
    /// step gain is calibrated from it.
    pub step: f64,
    /// Perturbation size, in scaled parameter units.
    pub perturbation: f64,
    /// Stability constant of the step schedule.
    pub stability: f64,
    pub step_decay: f64,
    pub perturbation_decay: f64,
    /// Parameter-space scale of `alpha`, `beta` and the modulation taps.
    pub alpha_scale: f64,
    pub beta_scale: f64,
    pub w_scale: f64,
    pub tune_alpha: bool,
    pub tune_beta: bool,
    pub tune_w: bool,
    /// Share of each modulation tap's perturbation that is common to its
    /// whole kernel, in `[0, 1]`.
    pub cell_coherence: f64,
    pub augmentation: Augmentation,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            batch_size: 8,
            val_size: 8,
            iterations: 200,
            step: 0.15,
            perturbation: 0.05,
            stability: 20.0,
            step_decay: 0.602,
            perturbation_decay: 0.101,
            alpha_scale: 1.0,
            beta_scale: 1.0,
            w_scale: 1.0,
            tune_alpha: true,
            tune_beta: true,
            tune_w: true,
            cell_coherence: 0.8,
            augmentation: Augmentation::default(),
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.patch_size == 0 || self.batch_size == 0 || self.val_size == 0 {
            return bad("patch, batch and validation sizes must be >= 1");
        }
        for (name, v) in [
            ("step", self.step),
            ("perturbation", self.perturbation),
            ("alpha_scale", self.alpha_scale),
            ("beta_scale", self.beta_scale),
            ("w_scale", self.w_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.cell_coherence) {
            return bad("cell_coherence must lie in [0, 1]");
        }
        if !(self.stability >= 0.0) {
            return bad("stability must be >= 0");
        }
        let a = &self.augmentation;
        if !(a.brightness >= 0.0 && a.contrast >= 0.0 && a.gamma >= 0.0) {
            return bad("augmentation ranges must be >= 0");
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Alpha,
    Beta,
    W,
}

/// Trainable parameters flattened as `[alpha, beta, W...]`, each divided by
/// its group scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    scales: [f64; 3],
    xi: f64,
}

impl ParamVector {
    pub fn new(params: &PcParams, modulation: &Modulation, scales: [f64; 3]) -> Self {
        let mut values = Vec::with_capacity(2 + modulation.len());
        values.push(params.alpha / scales[0]);
        values.push(params.beta / scales[1]);
        values.extend(modulation.flatten().into_iter().map(|w| w / scales[2]));
        Self {
            values,
            scales,
            xi: params.xi,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group(&self, i: usize) -> Group {
        match i {
            0 => Group::Alpha,
            1 => Group::Beta,
            _ => Group::W,
        }
    }

    pub fn params(&self) -> PcParams {
        PcParams {
            alpha: self.values[0] * self.scales[0],
            beta: self.values[1] * self.scales[1],
            xi: self.xi,
        }
    }

    pub fn modulation(&self, bank: &FilterBank) -> Result<Modulation> {
        let w: Vec<f64> = self.values[2..].iter().map(|v| v * self.scales[2]).collect();
        Modulation::unflatten(bank.config(), &w)
    }

    /// Clamps `alpha` to at least `1 + 1e-3` and `beta` to at least 0.
    pub fn project(&mut self) {
        self.values[0] = self.values[0].max(ALPHA_FLOOR / self.scales[0]);
        self.values[1] = self.values[1].max(0.0);
    }
}

/// `batch_size` co-located random crops, each side augmented
/// independently.
pub fn sample_batch<R: Rng>(
    dataset: &[(GrayImage, GrayImage)],
    cfg: &TrainConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(GrayImage, GrayImage)>> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let p = cfg.patch_size;
    for (a, b) in dataset {
        if a.dims() != b.dims() {
            return Err(Error::ShapeMismatch(format!(
                "pair sides differ: {:?} vs {:?}",
                a.dims(),
                b.dims()
            )));
        }
        if a.width() < p || a.height() < p {
            return Err(Error::ImageTooSmall(format!(
                "patch {p} larger than training image {:?}",
                a.dims()
            )));
        }
    }
    (0..count)
        .map(|_| {
            let (a, b) = &dataset[rng.random_range(0..dataset.len())];
            let x0 = rng.random_range(0..=a.width() - p);
            let y0 = rng.random_range(0..=a.height() - p);
            let ca = cfg.augmentation.apply(a.crop(x0, y0, p, p)?, rng);
            let cb = cfg.augmentation.apply(b.crop(x0, y0, p, p)?, rng);
            Ok((ca, cb))
        })
        .collect()
}

/// Mean similarity loss over the pairs, both sides run through the same
/// bank and parameters.
pub fn batch_loss(
    pairs: &[(GrayImage, GrayImage)],
    bank: &FilterBank,
    params: &PcParams,
    cfg: &LossConfig,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|(a, b)| similarity_loss(&forward(a, bank, params)?, &forward(b, bank, params)?, cfg))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / pairs.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TuneResult {
    /// Best parameters seen on the validation batch.
    pub params: PcParams,
    pub modulation: Modulation,
    /// Validation loss at the start and after every step.
    pub loss_history: Vec<f64>,
    /// Running minimum of `loss_history`.
    pub best_history: Vec<f64>,
}

impl TuneResult {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    pub fn best_loss(&self) -> f64 {
        *self.best_history.last().unwrap()
    }
}

fn evaluate(
    u: &ParamVector,
    bank: &FilterBank,
    pairs: &[(GrayImage, GrayImage)],
    cfg: &LossConfig,
) -> Result<f64> {
    let b = bank.with_modulation(u.modulation(bank)?)?;
    match batch_loss(pairs, &b, &u.params(), cfg) {
        Ok(v) => Ok(v),
        // an iterate that breaks the forward pass counts as a non-finite loss
        Err(Error::InvalidConfig(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

fn perturbed(u: &ParamVector, delta: &[f64], scale: f64) -> ParamVector {
    let mut p = u.clone();
    for (v, d) in p.values.iter_mut().zip(delta) {
        *v += scale * d;
    }
    p.project();
    p
}

/// SPSA fit starting from `bank`'s modulation and `init`.
pub fn tune(
    dataset: &[(GrayImage, GrayImage)],
    bank: &FilterBank,
    init: &PcParams,
    cfg: &TrainConfig,
) -> Result<TuneResult> {
    cfg.validate()?;
    init.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val = sample_batch(dataset, cfg, cfg.val_size, &mut rng)?;

    let scales = [cfg.alpha_scale, cfg.beta_scale, cfg.w_scale];
    let mut u = ParamVector::new(init, bank.modulation(), scales);
    u.project();
    let active: Vec<bool> = (0..u.len())
        .map(|i| match u.group(i) {
            Group::Alpha => cfg.tune_alpha,
            Group::Beta => cfg.tune_beta,
            Group::W => cfg.tune_w,
        })
        .collect();

    let v0 = evaluate(&u, bank, &val, &cfg.loss)?;
    if !v0.is_finite() {
        return Err(Error::TuneDiverged { rejections: 0, history: vec![v0] });
    }
    let mut history = vec![v0];
    let mut best_history = vec![v0];
    let mut best = u.clone();
    let mut best_loss = v0;

    if cfg.iterations == 0 || !active.iter().any(|&a| a) {
        return Ok(TuneResult {
            params: *init,
            modulation: bank.modulation().clone(),
            loss_history: history,
            best_history,
        });
    }

    // modulation taps are grouped by (even/odd, cell); each block shares
    // one random sign that is mixed with an independent per-tap sign
    let cfg_bank = bank.config();
    let mut block = vec![usize::MAX; 2];
    for b in 0..2 * cfg_bank.n_cells() {
        let k = cfg_bank.kernel_sizes[(b % cfg_bank.n_cells()) / cfg_bank.n_orientations];
        block.extend(std::iter::repeat_n(b, k * k));
    }
    let n_blocks = 2 * cfg_bank.n_cells();
    let (shared, own) = (cfg.cell_coherence.sqrt(), (1.0 - cfg.cell_coherence).sqrt());
    let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
    let draw_delta = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let blocks: Vec<f64> = (0..n_blocks).map(|_| sign(rng)).collect();
        active
            .iter()
            .zip(&block)
            .map(|(&a, &b)| {
                let e = sign(rng);
                match (a, b) {
                    (false, _) => 0.0,
                    (true, usize::MAX) => e,
                    (true, b) => shared * blocks[b] + own * e,
                }
            })
            .collect()
    };

    // step gain calibrated so the first update moves each active
    // coordinate by about `cfg.step`
    let mut gain = None;
    let mut c_mult = 1.0;
    let mut rejections = 0;
    for k in 0..cfg.iterations {
        let batch = sample_batch(dataset, cfg, cfg.batch_size, &mut rng)?;
        let delta = draw_delta(&mut rng);
        let ck = c_mult * cfg.perturbation / ((k + 1) as f64).powf(cfg.perturbation_decay);
        let up = perturbed(&u, &delta, ck);
        let um = perturbed(&u, &delta, -ck);
        let lp = evaluate(&up, bank, &batch, &cfg.loss)?;
        let lm = evaluate(&um, bank, &batch, &cfg.loss)?;

        let mut step_ok = lp.is_finite() && lm.is_finite();
        let mut next = u.clone();
        let mut v = f64::NAN;
        if step_ok {
            let diff = (lp - lm) / (2.0 * ck);
            let a0 = *gain.get_or_insert_with(|| {
                if diff == 0.0 {
                    0.0
                } else {
                    cfg.step * (cfg.stability + 1.0).powf(cfg.step_decay) / diff.abs()
                }
            });
            let ak = a0 / (k as f64 + 1.0 + cfg.stability).powf(cfg.step_decay);
            for ((x, d), &a) in next.values.iter_mut().zip(&delta).zip(&active) {
                if a {
                    *x -= ak * diff * d;
                }
            }
            next.project();
            v = evaluate(&next, bank, &val, &cfg.loss)?;
            step_ok = v.is_finite();
        }

        if !step_ok {
            rejections += 1;
            c_mult *= 0.5;
            history.push(*history.last().unwrap());
            best_history.push(best_loss);
            if rejections >= MAX_REJECTIONS {
                return Err(Error::TuneDiverged { rejections, history });
            }
            continue;
        }
        rejections = 0;
        u = next;
        history.push(v);
        if v < best_loss {
            best_loss = v;
            best = u.clone();
        }
        best_history.push(best_loss);
    }

    Ok(TuneResult {
        params: best.params(),
        modulation: best.modulation(bank)?,
        loss_history: history,
        best_history,
    })
}
