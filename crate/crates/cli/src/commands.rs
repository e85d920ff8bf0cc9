//! Subcommand implementations.

use std::fs;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pcnet::imgcore::{load_image, save_png, save_rgb_png, warp_affine};
use pcnet::metrics::{ace, aee};
use pcnet::pc::forward;
use pcnet::register::register;
use pcnet::synth::{aligned_pairs, builtin_suite_sized};
use pcnet::tuner::tune;
use pcnet::{AffineParams, BankConfig, Error, FilterBank, GrayImage, PcParams, RegConfig, Weights};
use rayon::prelude::*;

use crate::config::Overrides;
use crate::manifest::{Job, RunManifest, TransformFile};
use crate::report::{csv_field, summarize, Summary};

pub const EVAL_CSV_VERSION: &str = "pcnet-eval-v1";
pub const REPORT_CSV_VERSION: &str = "pcnet-report-v1";
pub const HISTORY_CSV_VERSION: &str = "pcnet-loss-history-v1";

/// Settings shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Env {
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub overrides: Overrides,
}

impl Env {
    fn out_dir(&self, fallback: Option<&Path>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| fallback.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Joins `name` onto `out`, refusing names that would leave it.
pub fn output_path(out: &Path, name: impl AsRef<Path>) -> Result<PathBuf> {
    let name = name.as_ref();
    ensure!(
        name.components().count() > 0 && name.components().all(|c| matches!(c, Component::Normal(_))),
        "output name {} must be a relative path inside the output directory",
        name.display()
    );
    Ok(out.join(name))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn load_weights(path: Option<&Path>) -> Result<Weights> {
    match path {
        Some(p) => Weights::load(p).with_context(|| format!("loading weights {}", p.display())),
        None => Ok(Weights::initial(&BankConfig::default())),
    }
}

fn load(path: &Path) -> Result<GrayImage> {
    load_image(path).with_context(|| format!("loading {}", path.display()))
}

pub struct EnhanceOptions {
    pub input: PathBuf,
    pub orientations: Option<usize>,
    pub composite: bool,
}

/// Writes `<stem>_o<k>.png` per orientation and `<stem>_composite.png`.
pub fn enhance(env: &Env, opts: &EnhanceOptions) -> Result<Vec<PathBuf>> {
    let weights = load_weights(env.weights.as_deref())?;
    let (bank, params) = match opts.orientations {
        Some(n) if n != weights.bank.n_orientations => {
            ensure!(
                env.weights.is_none(),
                "--orientations {n} conflicts with the {}-orientation weights file",
                weights.bank.n_orientations
            );
            let cfg = BankConfig::with_layout(n, weights.bank.kernel_sizes.clone());
            Weights::initial(&cfg).build()?
        }
        _ => weights.build()?,
    };
    let img = load(&opts.input)?;
    let features = forward(&img, &bank, &params)?;
    let stem = opts
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let out = env.out_dir(None);
    let mut outputs = Vec::new();
    for (k, c) in features.channels.iter().enumerate() {
        outputs.push((output_path(&out, format!("{stem}_o{k}.png"))?, c.clone()));
    }
    if opts.composite {
        outputs.push((output_path(&out, format!("{stem}_composite.png"))?, features.channel_max()));
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (path, img) in &outputs {
        save_png(img, path)?;
    }
    Ok(outputs.into_iter().map(|(p, _)| p).collect())
}

pub struct RegisterOptions {
    pub reference: PathBuf,
    pub floating: PathBuf,
    pub levels: Option<usize>,
    pub max_iters: Option<usize>,
    pub out_transform: PathBuf,
    pub out_overlay: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RegisterOutcome {
    pub a_hat: AffineParams,
    pub objective: f64,
    pub converged: bool,
    /// `(AEE, ACE)` against the ground truth, when one was given.
    pub errors: Option<(f64, f64)>,
}

fn register_images(
    i_ref: &GrayImage,
    i_flt: &GrayImage,
    bank: &FilterBank,
    params: &PcParams,
    cfg: &RegConfig,
) -> Result<(AffineParams, f64, bool)> {
    ensure!(
        i_ref.dims() == i_flt.dims(),
        "reference is {:?} but floating is {:?}",
        i_ref.dims(),
        i_flt.dims()
    );
    let r = register(i_ref, i_flt, bank, params, cfg)?;
    let objective = r.objective_trace.last().copied().unwrap_or(f64::NAN);
    Ok((r.a_hat, objective, r.converged))
}

pub fn register_cmd(env: &Env, opts: &RegisterOptions) -> Result<RegisterOutcome> {
    let (bank, params) = load_weights(env.weights.as_deref())?.build()?;
    let mut cfg = env.overrides.register_config()?;
    if let Some(l) = opts.levels {
        cfg.levels = Some(l);
    }
    if let Some(m) = opts.max_iters {
        cfg.max_iters = m;
    }
    cfg.validate()?;
    let gt = opts.ground_truth.as_deref().map(TransformFile::load).transpose()?;
    let out = env.out_dir(None);
    let transform_path = output_path(&out, &opts.out_transform)?;
    let overlay_path = opts.out_overlay.as_ref().map(|p| output_path(&out, p)).transpose()?;

    let i_ref = load(&opts.reference)?;
    let i_flt = load(&opts.floating)?;
    let (a_hat, objective, converged) = register_images(&i_ref, &i_flt, &bank, &params, &cfg)?;

    create_parent(&transform_path)?;
    fs::write(&transform_path, TransformFile::from(a_hat).to_json())
        .with_context(|| format!("writing {}", transform_path.display()))?;
    if let Some(path) = overlay_path {
        // floating resampled onto the reference grid: sample at a_hat(p)
        let (warped, _) = warp_affine(&i_flt, &a_hat.inverse()?)?;
        let blank = GrayImage::filled(i_ref.width(), i_ref.height(), 0.0);
        create_parent(&path)?;
        save_rgb_png(&i_ref, &warped, &blank, &path)?;
    }
    let (w, h) = i_ref.dims();
    let errors = gt.map(|g| (aee(&g.params(), &a_hat, w, h), ace(&g.params(), &a_hat, w, h)));
    Ok(RegisterOutcome {
        a_hat,
        objective,
        converged,
        errors,
    })
}

#[derive(Clone, Debug)]
pub struct JobResult {
    pub id: String,
    pub a_hat: AffineParams,
    /// Final mean squared feature difference at the finest level.
    pub loss: f64,
    pub errors: Option<(f64, f64)>,
}

fn run_job(env: &Env, job: &Job, bank: &FilterBank, params: &PcParams) -> Result<JobResult> {
    let overrides = match &job.config {
        Some(v) => env.overrides.then(&Overrides::from_value(v.clone())?),
        None => env.overrides.clone(),
    };
    let cfg = overrides.register_config()?;
    let i_ref = load(&job.reference)?;
    let i_flt = load(&job.floating)?;
    let (a_hat, loss, _) = register_images(&i_ref, &i_flt, bank, params, &cfg)?;
    let (w, h) = i_ref.dims();
    let errors = job
        .ground_truth
        .map(|g| (aee(&g.params(), &a_hat, w, h), ace(&g.params(), &a_hat, w, h)));
    Ok(JobResult {
        id: job.id.clone(),
        a_hat,
        loss,
        errors,
    })
}

fn run_jobs(env: &Env, jobs: &[Job]) -> Result<Vec<Result<JobResult>>> {
    let (bank, params) = load_weights(env.weights.as_deref())?.build()?;
    Ok(jobs.par_iter().map(|job| run_job(env, job, &bank, &params)).collect())
}

pub struct EvalOutcome {
    pub csv: PathBuf,
    pub results: Vec<Result<JobResult>>,
}

/// Registers every job and writes one CSV row per job. Fails after writing
/// the CSV if any job failed.
pub fn eval(env: &Env, manifest_path: &Path, csv_name: &Path) -> Result<EvalOutcome> {
    let manifest = RunManifest::load(manifest_path)?;
    let out = env.out_dir(manifest.output_dir.as_deref());
    let csv = output_path(&out, csv_name)?;
    let results = run_jobs(env, &manifest.jobs)?;

    let mut text = format!("# {EVAL_CSV_VERSION}\nid,aee,ace,loss,a1,a2,a3,a4,a5,a6,status\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (job, r) in manifest.jobs.iter().zip(&results) {
        match r {
            Ok(r) => {
                let a: Vec<String> = r.a_hat.params().iter().map(|v| v.to_string()).collect();
                text += &format!(
                    "{},{},{},{},{},ok\n",
                    csv_field(&r.id),
                    opt(r.errors.map(|e| e.0)),
                    opt(r.errors.map(|e| e.1)),
                    r.loss,
                    a.join(",")
                );
            }
            Err(e) => {
                text += &format!("{},,,,,,,,,,{}\n", csv_field(&job.id), csv_field(&format!("error: {e:#}")));
            }
        }
    }
    create_parent(&csv)?;
    fs::write(&csv, text).with_context(|| format!("writing {}", csv.display()))?;
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        for (job, r) in manifest.jobs.iter().zip(&results) {
            if let Err(e) = r {
                eprintln!("job {}: {e:#}", job.id);
            }
        }
        bail!("{failed} of {} jobs failed", results.len());
    }
    Ok(EvalOutcome { csv, results })
}

pub struct ReportOutcome {
    pub csv: PathBuf,
    pub aee: Option<Summary>,
    pub ace: Option<Summary>,
    pub skipped: Vec<String>,
}

/// Registers every job with a ground truth and writes per-job errors plus
/// summary statistics. Jobs without a ground truth are skipped with a
/// warning.
pub fn report(env: &Env, manifest_path: &Path, csv_name: &Path) -> Result<ReportOutcome> {
    let manifest = RunManifest::load(manifest_path)?;
    let out = env.out_dir(manifest.output_dir.as_deref());
    let csv = output_path(&out, csv_name)?;
    let (jobs, skipped): (Vec<Job>, Vec<Job>) =
        manifest.jobs.into_iter().partition(|j| j.ground_truth.is_some());
    for j in &skipped {
        eprintln!("warning: job {} has no ground truth, skipped", j.id);
    }
    let results = run_jobs(env, &jobs)?;

    let mut text = format!("# {REPORT_CSV_VERSION}\nkind,name,aee,ace\n");
    let (mut aees, mut aces) = (Vec::new(), Vec::new());
    for (job, r) in jobs.iter().zip(&results) {
        match r {
            Ok(r) => {
                let (e, c) = r.errors.expect("jobs were filtered on ground truth");
                aees.push(e);
                aces.push(c);
                text += &format!("job,{},{e},{c}\n", csv_field(&r.id));
            }
            Err(e) => eprintln!("job {}: {e:#}", job.id),
        }
    }
    let (sa, sc) = (summarize(&aees), summarize(&aces));
    if let (Some(a), Some(c)) = (&sa, &sc) {
        for ((name, va), (_, vc)) in a.rows().into_iter().zip(c.rows()) {
            text += &format!("summary,{name},{va},{vc}\n");
        }
    }
    create_parent(&csv)?;
    fs::write(&csv, text).with_context(|| format!("writing {}", csv.display()))?;
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        bail!("{failed} of {} jobs failed", results.len());
    }
    Ok(ReportOutcome {
        csv,
        aee: sa,
        ace: sc,
        skipped: skipped.into_iter().map(|j| j.id).collect(),
    })
}

pub struct TuneOptions {
    pub data: PathBuf,
    pub init_weights: Option<PathBuf>,
    pub out_weights: PathBuf,
    pub history: PathBuf,
    pub iters: Option<usize>,
}

pub struct TuneOutcome {
    pub weights: PathBuf,
    pub history: PathBuf,
    pub initial_loss: f64,
    pub best_loss: f64,
}

/// Manifest files under `data`: the file itself, or every `*.json` in the
/// directory.
fn manifest_files(data: &Path) -> Result<Vec<PathBuf>> {
    if data.is_file() {
        return Ok(vec![data.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(data)
        .with_context(|| format!("reading {}", data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    ensure!(!files.is_empty(), "no manifest found in {}", data.display());
    Ok(files)
}

fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut text = format!("# {HISTORY_CSV_VERSION}\niteration,val_loss,best_loss\n");
    let mut best = f64::INFINITY;
    for (k, v) in history.iter().enumerate() {
        best = best.min(*v);
        text += &format!("{k},{v},{best}\n");
    }
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn tune_cmd(env: &Env, opts: &TuneOptions) -> Result<TuneOutcome> {
    let mut dataset = Vec::new();
    for file in manifest_files(&opts.data)? {
        let m = RunManifest::load(&file)?;
        for job in &m.jobs {
            let (a, b) = (load(&job.reference)?, load(&job.floating)?);
            ensure!(a.dims() == b.dims(), "job {}: pair sides differ in size", job.id);
            dataset.push((a, b));
        }
    }
    ensure!(!dataset.is_empty(), "no training pairs in {}", opts.data.display());
    let init = load_weights(opts.init_weights.as_deref().or(env.weights.as_deref()))?;
    let (bank, params) = init.build()?;
    let mut cfg = env.overrides.train_config()?;
    if let Some(n) = opts.iters {
        cfg.iterations = n;
    }
    if let Some(s) = env.seed {
        cfg.seed = s;
    }
    let out = env.out_dir(None);
    let weights_path = output_path(&out, &opts.out_weights)?;
    let history_path = output_path(&out, &opts.history)?;

    let result = match tune(&dataset, &bank, &params, &cfg) {
        Ok(r) => r,
        Err(Error::TuneDiverged { rejections, history }) => {
            write_history(&history_path, &history)?;
            bail!("tuning diverged after {rejections} rejected steps; history in {}", history_path.display());
        }
        Err(e) => return Err(e.into()),
    };
    write_history(&history_path, &result.loss_history)?;
    create_parent(&weights_path)?;
    Weights::new(bank.config(), &result.params, &result.modulation).save(&weights_path)?;
    Ok(TuneOutcome {
        weights: weights_path,
        history: history_path,
        initial_loss: result.initial_loss(),
        best_loss: result.best_loss(),
    })
}

pub struct SynthOptions {
    pub size: usize,
    /// Write this many aligned training pairs instead of the suite.
    pub aligned: Option<usize>,
}

/// Writes the pairs as PNGs plus `manifest.json`; returns the manifest path.
pub fn synth(env: &Env, opts: &SynthOptions) -> Result<PathBuf> {
    let seed = env.seed.unwrap_or(0);
    let out = env.out_dir(None);
    let mut images = Vec::new();
    let mut jobs = Vec::new();
    let mut add = |id: String, r: GrayImage, f: GrayImage, gt: Option<AffineParams>| {
        let (rn, fnm) = (format!("{id}_ref.png"), format!("{id}_flt.png"));
        images.push((rn.clone(), r));
        images.push((fnm.clone(), f));
        jobs.push(Job {
            id,
            reference: rn.into(),
            floating: fnm.into(),
            ground_truth: gt.map(TransformFile::from),
            config: None,
        });
    };
    match opts.aligned {
        Some(n) => {
            for (i, (a, b)) in aligned_pairs(seed, n, opts.size)?.into_iter().enumerate() {
                add(format!("pair_{i:02}"), a, b, None);
            }
        }
        None => {
            for case in builtin_suite_sized(seed, opts.size)? {
                add(case.name, case.pair.reference, case.pair.floating, Some(case.pair.a_gt));
            }
        }
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (name, img) in &images {
        save_png(img, output_path(&out, name)?)?;
    }
    let path = output_path(&out, "manifest.json")?;
    RunManifest::new(jobs).save(&path)?;
    Ok(path)
}

/// Prints a summary table for the report subcommand.
pub fn print_summary(out: &mut impl std::io::Write, aee: &Summary, ace: &Summary) -> std::io::Result<()> {
    writeln!(out, "{:<12} {:>10} {:>10}", "statistic", "AEE", "ACE")?;
    for ((name, a), (_, c)) in aee.rows().into_iter().zip(ace.rows()) {
        writeln!(out, "{name:<12} {a:>10.4} {c:>10.4}")?;
    }
    writeln!(out, "{:<12} {:>10}", "jobs", aee.count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_names_stay_inside() {
        let out = Path::new("/tmp/out");
        assert_eq!(output_path(out, "a/b.png").unwrap(), out.join("a/b.png"));
        assert!(output_path(out, "../x.png").is_err());
        assert!(output_path(out, "/etc/x").is_err());
        assert!(output_path(out, "").is_err());
    }

    #[test]
    fn history_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_history(&p, &[3.0, 2.0, 2.5]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, format!("# {HISTORY_CSV_VERSION}\niteration,val_loss,best_loss\n0,3,3\n1,2,2\n2,2.5,2\n"));
    }
}
