//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines show up
//! under a plain `cargo test`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use pcnet::metrics::{aee, ace, similarity_loss};
use pcnet::pc::{forward, forward_with, noise_from_tau, noise_threshold, reference_pc, PcVariant};
use pcnet::register::{register, register_intensity, ssd_objective, ssd_objective_and_gradient};
use pcnet::synth::{self, Grade, GratingSpec, Remap, SuiteCase};
use pcnet::{
    AffineParams, BankConfig, FeatureStack, FilterBank, GrayImage, LossConfig, PcParams, RegConfig, Threshold,
    TrainConfig, Weights,
};
use pcnet_cli::report::summarize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn default_bank() -> FilterBank {
    FilterBank::new(BankConfig::default()).unwrap()
}

/// Per-case registration errors with the PC features and the intensity
/// control, kept for the tuned-weights comparison.
struct SuiteScores {
    pc_aee: Vec<f64>,
    ctrl_aee: Vec<Option<f64>>,
}

fn score_suite(cases: &[SuiteCase], bank: &FilterBank, params: &PcParams, control: bool) -> SuiteScores {
    let cfg = RegConfig::default();
    let rows: Vec<(f64, Option<f64>)> = cases
        .par_iter()
        .map(|c| {
            let (w, h) = c.pair.reference.dims();
            let r = register(&c.pair.reference, &c.pair.floating, bank, params, &cfg).unwrap();
            let e = aee(&c.pair.a_gt, &r.a_hat, w, h);
            let ctrl = (control && matches!(c.remap, Remap::Invert)).then(|| {
                let r = register_intensity(&c.pair.reference, &c.pair.floating, &cfg).unwrap();
                aee(&c.pair.a_gt, &r.a_hat, w, h)
            });
            (e, ctrl)
        })
        .collect();
    SuiteScores {
        pc_aee: rows.iter().map(|r| r.0).collect(),
        ctrl_aee: rows.iter().map(|r| r.1).collect(),
    }
}

fn pass_count(scores: &SuiteScores) -> usize {
    scores.pc_aee.iter().filter(|&&e| e < 1.0).count()
}

// 1. forward pass against the pixelwise phase-congruency formulas
fn criterion_1() -> Outcome {
    let t = Instant::now();
    let bank = default_bank();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut err1, mut err0) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let img = GrayImage::from_fn(64, 64, |_, _| rng.random::<f64>());
        for (beta, variant) in [(1.0, PcVariant::Pc1), (0.0, PcVariant::Pc0)] {
            let params = PcParams { beta, ..PcParams::default() };
            let fast = forward_with(&img, &bank, &params, Threshold::Fixed(0.0)).unwrap();
            let slow = reference_pc(&img, &bank, params.xi, variant).unwrap();
            for (f, s) in fast.channels.iter().zip(&slow) {
                for (&a, &b) in f.data().iter().zip(s.data()) {
                    // the network output is rectified; the classical value is not
                    let d = (a - b.max(0.0)).abs();
                    if variant == PcVariant::Pc1 {
                        err1 = err1.max(d);
                    } else {
                        err0 = err0.max(d);
                    }
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        err1 <= 1e-6 && err0 <= 1e-6 && secs < 30.0,
        format!("max |err| PC1 {err1:.2e}, PC0 {err0:.2e} (tol 1e-6), {secs:.1} s (limit 30 s)"),
    )
}

// 2. grating maxima sit on the congruent abscissae
fn criterion_2() -> Outcome {
    let spec = GratingSpec::default();
    let img = synth::grating(&spec).unwrap();
    let f = forward(&img, &default_bank(), &PcParams::default()).unwrap();
    // all harmonics share one phase where x is a multiple of π; the border
    // periods are skipped
    let period = spec.width / 4;
    let mut worst = 0usize;
    let mut margin = f64::INFINITY;
    let mut found = Vec::new();
    for (row, phi) in [(0usize, 0.0), (32, PI / 4.0), (64, PI / 2.0)] {
        assert!((spec.phase_of(row) - phi).abs() < 1e-12);
        // orientation 0 responds to the vertical bars
        let r = f.channels[0].row(row);
        let mut peaks = Vec::new();
        for k in 1..4 {
            let target = k * period;
            let window = target - period / 2..target + period / 2;
            let best = window.clone().max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
            // strongest value more than a pixel away from the maximum
            let runner = window.filter(|i| i.abs_diff(best) > 1).map(|i| r[i]).fold(0.0, f64::max);
            worst = worst.max(best.abs_diff(target));
            margin = margin.min(r[best] - runner);
            peaks.push(best);
        }
        found.push(format!("φ={phi:.3}: {peaks:?}"));
    }
    outcome(
        worst <= 1 && margin > 0.0,
        format!(
            "per-period row maxima at most {worst} px from 32k (tol 1), lead over the next ripple ≥ {margin:.2}; {}",
            found.join("; ")
        ),
    )
}

// 3. gain and offset invariance on clean edges
fn criterion_3() -> Outcome {
    let bank = default_bank();
    let params = PcParams::default();
    let scenes = [
        GrayImage::from_fn(64, 64, |x, _| if x < 32 { 0.3 } else { 0.6 }),
        GrayImage::from_fn(64, 64, |x, y| if 2 * x + y < 90 { 0.25 } else { 0.55 }),
        GrayImage::from_fn(64, 64, |x, y| {
            let (dx, dy) = (x as f64 - 30.0, y as f64 - 34.0);
            if dx * dx + dy * dy < 225.0 { 0.7 } else { 0.2 }
        }),
    ];
    let mut worst = 0.0f64;
    for img in &scenes {
        let base = forward(img, &bank, &params).unwrap();
        for gamma in [0.5, 2.0] {
            for c in [-0.1, 0.2] {
                let moved = forward(&img.map(|v| gamma * v + c), &bank, &params).unwrap();
                for (a, b) in base.channels.iter().zip(&moved.channels) {
                    for (x, y) in a.data().iter().zip(b.data()) {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
    }
    outcome(worst <= 1e-6, format!("max |ΔP| {worst:.2e} over γ∈{{0.5,2}}, c∈{{-0.1,0.2}} (tol 1e-6)"))
}

// 4. noise layer
fn criterion_4() -> Outcome {
    let bank = default_bank();
    let params = PcParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let flat = GrayImage::from_fn(64, 64, |_, _| 0.5 + noise.sample(&mut rng));
    let ff = forward(&flat, &bank, &params).unwrap();
    let noise_mean = ff.channels.iter().map(|c| c.mean()).sum::<f64>() / ff.n_channels() as f64;

    let step = GrayImage::from_fn(64, 64, |x, _| if x < 32 { 0.2 } else { 0.8 });
    let step_max = forward(&step, &bank, &params).unwrap().channel_max().min_max().1;

    // threshold on a fixed amplitude sample as alpha grows
    let amps: Vec<f64> = (0..256).map(|i| 0.01 + 0.001 * (i % 37) as f64).collect();
    let ts: Vec<f64> = (0..=15)
        .map(|i| {
            let alpha = 1.5 + 0.1 * i as f64;
            noise_threshold(&amps, 4, &PcParams { alpha, ..params }).unwrap().threshold
        })
        .collect();
    let decreasing = ts.windows(2).all(|w| w[1] < w[0]);

    let hand = noise_from_tau(1.0, 4, &PcParams { alpha: 2.0, beta: 1.0, xi: 1e-15 }).unwrap();
    let vg_err = (hand.v_g - 1.875).abs();
    let t_err = (hand.threshold - 1.875 * ((PI / 2.0).sqrt() + ((4.0 - PI) / 2.0).sqrt())).abs();

    outcome(
        noise_mean <= 0.02 && step_max >= 0.5 && decreasing && vg_err < 1e-9 && t_err < 1e-9,
        format!(
            "noise mean {noise_mean:.4} (≤ 0.02), step max {step_max:.3} (≥ 0.5), T decreasing over α∈[1.5,3]: {decreasing}, |V_G − 1.875| {vg_err:.1e}"
        ),
    )
}

fn smooth_field<R: Rng>(w: usize, h: usize, rng: &mut R) -> GrayImage {
    let waves: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.random_range(0.05..0.4),
                rng.random_range(0.05..0.4),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    GrayImage::from_fn(w, h, |x, y| {
        let v: f64 = waves
            .iter()
            .map(|&(kx, ky, p, a)| a * (kx * x as f64 + ky * y as f64 + p).sin())
            .sum();
        0.5 + 0.1 * v
    })
}

// 5. analytic gradient of the SSD objective
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let h = [1e-8, 1e-8, 1e-7, 1e-8, 1e-8, 1e-7];
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (w, ht) = (48, 40);
        let nc = rng.random_range(1..=3);
        let f_ref = FeatureStack::new((0..nc).map(|_| smooth_field(w, ht, &mut rng)).collect()).unwrap();
        let f_flt = FeatureStack::new((0..nc).map(|_| smooth_field(w, ht, &mut rng)).collect()).unwrap();
        let mut p = AffineParams::IDENTITY.params();
        for (i, v) in p.iter_mut().enumerate() {
            *v += if i % 3 == 2 { rng.random_range(-3.0..3.0) } else { rng.random_range(-0.05..0.05) };
        }
        let a = AffineParams::new(p);
        let (_, _, g) = ssd_objective_and_gradient(&f_ref, &f_flt, &a).unwrap();
        let fd: Vec<f64> = (0..6)
            .map(|k| {
                let (mut up, mut dn) = (p, p);
                up[k] += h[k];
                dn[k] -= h[k];
                let fu = ssd_objective(&f_ref, &f_flt, &AffineParams::new(up)).unwrap().0;
                let fl = ssd_objective(&f_ref, &f_flt, &AffineParams::new(dn)).unwrap().0;
                (fu - fl) / (2.0 * h[k])
            })
            .collect();
        let norm = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..6 {
            worst = worst.max((g[k] - fd[k]).abs() / fd[k].abs().max(1e-6 * norm));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    let same = FeatureStack::new(vec![smooth_field(48, 40, &mut rng), smooth_field(48, 40, &mut rng)]).unwrap();
    let g0 = ssd_objective_and_gradient(&same, &same, &AffineParams::IDENTITY).unwrap().2;
    let g0_inf = g0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    outcome(
        worst < 1e-3 && g0_inf < 1e-8,
        format!("max relative error {worst:.2e} over 20 configurations (tol 1e-3), ‖∇‖∞ at alignment {g0_inf:.1e} (tol 1e-8)"),
    )
}

fn grade_rates(cases: &[SuiteCase], scores: &SuiteScores) -> [(usize, usize); 3] {
    Grade::ALL.map(|g| {
        let idx: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].grade == g).collect();
        (idx.iter().filter(|&&i| scores.pc_aee[i] < 1.0).count(), idx.len())
    })
}

// 6. end-to-end registration on the builtin suite
fn criterion_6(cases: &[SuiteCase], scores: &SuiteScores, secs: f64) -> Outcome {
    let rates = grade_rates(cases, scores);
    let frac = |(a, b): (usize, usize)| a as f64 / b as f64;
    let ctrl: Vec<f64> = scores.ctrl_aee.iter().flatten().copied().collect();
    let ctrl_fail = ctrl.iter().filter(|&&e| e > 3.0).count();
    let pass = frac(rates[0]) >= 0.9
        && frac(rates[1]) >= 0.9
        && frac(rates[2]) >= 0.7
        && ctrl_fail as f64 >= 0.8 * ctrl.len() as f64
        && secs < 600.0;
    let failed: Vec<&str> = (0..cases.len())
        .filter(|&i| scores.pc_aee[i] >= 1.0)
        .map(|i| cases[i].name.as_str())
        .collect();
    outcome(
        pass,
        format!(
            "AEE < 1 px: s {}/{} (≥ 90%), m {}/{} (≥ 90%), l {}/{} (≥ 70%); intensity control AEE > 3 on {}/{} invert cases (≥ 80%); {secs:.0} s (limit 600 s); misses {failed:?}",
            rates[0].0, rates[0].1, rates[1].0, rates[1].1, rates[2].0, rates[2].1, ctrl_fail, ctrl.len()
        ),
    )
}

/// Gaussian-weighted SSIM with a direct 2-D window renormalized over the
/// in-bounds taps.
fn ssim_oracle(a: &GrayImage, b: &GrayImage, cfg: &LossConfig) -> f64 {
    let (w, h) = a.dims();
    let r = (cfg.ssim_window / 2) as i64;
    let (c1, c2) = ((cfg.k1 * cfg.data_range).powi(2), (cfg.k2 * cfg.data_range).powi(2));
    let mut total = 0.0;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut n, mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sx, sy) = (x + dx, y + dy);
                    if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                        continue;
                    }
                    let g = (-((dx * dx + dy * dy) as f64) / (2.0 * cfg.ssim_sigma * cfg.ssim_sigma)).exp();
                    let (va, vb) = (a.get(sx as usize, sy as usize), b.get(sx as usize, sy as usize));
                    n += g;
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let (ma, mb) = (ma / n, mb / n);
            let (va, vb, cov) = (saa / n - ma * ma, sbb / n - mb * mb, sab / n - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (w * h) as f64
}

/// ℓ1 norm of the central-difference gradient, one-sided on the border.
fn mass_oracle(img: &GrayImage) -> f64 {
    let (w, h) = img.dims();
    let d = |x: usize, y: usize| img.get(x, y);
    let mut m = 0.0;
    for y in 0..h {
        for x in 0..w {
            let gx = match x {
                0 => d(1, y) - d(0, y),
                _ if x == w - 1 => d(x, y) - d(x - 1, y),
                _ => 0.5 * (d(x + 1, y) - d(x - 1, y)),
            };
            let gy = match y {
                0 => d(x, 1) - d(x, 0),
                _ if y == h - 1 => d(x, y) - d(x, y - 1),
                _ => 0.5 * (d(x, y + 1) - d(x, y - 1)),
            };
            m += gx.abs() + gy.abs();
        }
    }
    m
}

fn loss_oracle(p1: &FeatureStack, p2: &FeatureStack, cfg: &LossConfig) -> f64 {
    let n = p1.n_channels() as f64;
    let ssim: f64 = p1.channels.iter().zip(&p2.channels).map(|(a, b)| ssim_oracle(a, b, cfg)).sum::<f64>() / n;
    let mass: f64 = p1.channels.iter().chain(&p2.channels).map(mass_oracle).sum::<f64>() / n;
    (1.0 - ssim) / mass.powf(cfg.c)
}

// 7. training loss and tuning
fn criterion_7(cases: &[SuiteCase], initial: &SuiteScores) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = LossConfig::default();
    let mut loss_err = 0.0f64;
    for _ in 0..5 {
        let mut stack = || {
            FeatureStack::new((0..2).map(|_| GrayImage::from_fn(8, 8, |_, _| rng.random::<f64>())).collect()).unwrap()
        };
        let (p1, p2) = (stack(), stack());
        let got = similarity_loss(&p1, &p2, &cfg).unwrap();
        let want = loss_oracle(&p1, &p2, &cfg);
        loss_err = loss_err.max((got - want).abs());
    }

    let t = Instant::now();
    let data = synth::aligned_pairs(3, 10, 128).unwrap();
    let bank = default_bank();
    let train = TrainConfig {
        patch_size: 64,
        batch_size: 4,
        val_size: 4,
        iterations: 200,
        seed: 5,
        ..TrainConfig::default()
    };
    let fit = pcnet::tuner::tune(&data, &bank, &PcParams::default(), &train).unwrap();
    let ratio = fit.best_loss() / fit.initial_loss();
    let tune_secs = t.elapsed().as_secs_f64();

    let tuned_bank = bank.with_modulation(fit.modulation.clone()).unwrap();
    let tuned = score_suite(cases, &tuned_bank, &fit.params, false);
    let (before, after) = (pass_count(initial), pass_count(&tuned));
    outcome(
        loss_err <= 1e-9 && ratio <= 0.9 && after >= before,
        format!(
            "loss vs scalar oracle {loss_err:.1e} (tol 1e-9); best/initial validation loss {ratio:.3} (≤ 0.9) in {tune_secs:.0} s; suite AEE < 1 px {after}/36 tuned vs {before}/36 initial"
        ),
    )
}

// 8. error metrics and report statistics
fn criterion_8() -> Outcome {
    let t = AffineParams::translation(3.0, 4.0);
    let (e, c) = (aee(&AffineParams::IDENTITY, &t, 256, 256), ace(&AffineParams::IDENTITY, &t, 256, 256));
    let trans_err = (e - 5.0).abs().max((c - 5.0).abs());

    let g = Grade::S.transform().params();
    let mut total = 0.0;
    for y in 0..256 {
        for x in 0..256 {
            let (x, y) = (x as f64, y as f64);
            let dx = (g[0] - 1.0) * x + g[1] * y + g[2];
            let dy = g[3] * x + (g[4] - 1.0) * y + g[5];
            total += (dx * dx + dy * dy).sqrt();
        }
    }
    let grade_err = (aee(&AffineParams::IDENTITY, &Grade::S.transform(), 256, 256) - total / 65536.0).abs();

    let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    let stats_ok = s.mean == 2.5 && s.median == 2.5 && s.trimean == 2.5 && s.best[1] == 1.5 && s.below == [0.0, 1.0, 1.0];
    outcome(
        trans_err < 1e-12 && grade_err < 1e-9 && stats_ok,
        format!(
            "translation(3,4) AEE {e} ACE {c} (want 5); grade-s AEE vs loop oracle {grade_err:.1e} (tol 1e-9); report on {{1,2,3,4}}: mean {} median {} trimean {} best50 {}",
            s.mean, s.median, s.trimean, s.best[1]
        ),
    )
}

// 9. parameter budget
fn criterion_9() -> Outcome {
    let w = Weights::initial(&BankConfig::default());
    let counted = 2 + w.cells.iter().map(|c| c.even.len() + c.odd.len()).sum::<usize>();
    let n = w.n_params as f64;
    outcome(
        counted == w.n_params && (0.7e4..=2.8e4).contains(&n),
        format!("{} trainable parameters ({counted} counted from the cells), within 2× of 1.4e4", w.n_params),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5());

    let t = Instant::now();
    let cases = synth::builtin_suite(1).unwrap();
    let initial = score_suite(&cases, &default_bank(), &PcParams::default(), true);
    report(6, criterion_6(&cases, &initial, t.elapsed().as_secs_f64()));
    report(7, criterion_7(&cases, &initial));
    report(8, criterion_8());
    report(9, criterion_9());

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
