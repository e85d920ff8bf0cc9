//! Command-line front end for the `pcnet` library: feature enhancement,
//! registration, evaluation against ground truth, tuning and synthetic data
//! generation.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::{EnhanceOptions, Env, RegisterOptions, SynthOptions, TuneOptions};
use config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "pcnet", version, about = "Phase-congruency similarity enhancement and affine registration")]
pub struct Cli {
    /// Weights file (pcnet-weights-v1 JSON); untrained defaults if omitted.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Output directory; every file a subcommand writes goes under it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// JSON overrides: {"register": {...}, "train": {...}}.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write per-orientation feature maps and their composite as PNGs.
    Enhance(EnhanceArgs),
    /// Register a floating image onto a reference image.
    Register(RegisterArgs),
    /// Register every job of a manifest and write a CSV row per job.
    Eval(ManifestArgs),
    /// Fit alpha, beta and the bank modulation on aligned pairs.
    Tune(TuneArgs),
    /// Write the synthetic suite (or aligned training pairs) and a manifest.
    Synth(SynthArgs),
    /// Error statistics over the jobs of a manifest that have ground truth.
    Report(ManifestArgs),
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Use an untrained bank with this many orientations.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub orientations: Option<u64>,
    #[arg(long)]
    pub no_composite: bool,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long = "flt")]
    pub floating: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub levels: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iters: Option<u64>,
    #[arg(long, default_value = "transform.json")]
    pub out_transform: PathBuf,
    /// False-colour overlay: reference in red, warped floating in green.
    #[arg(long)]
    pub out_overlay: Option<PathBuf>,
    /// Ground-truth transform JSON; prints AEE and ACE when given.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV file name inside the output directory.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Manifest of aligned pairs, or a directory of them.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub init_weights: Option<PathBuf>,
    #[arg(long, default_value = "weights.json")]
    pub out_weights: PathBuf,
    #[arg(long, default_value = "loss_history.csv")]
    pub history: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = pcnet::synth::SUITE_SIZE)]
    pub size: usize,
    /// Write this many aligned training pairs instead of the suite.
    #[arg(long)]
    pub aligned: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global();
    }
    let overrides = match &cli.config {
        Some(p) => Overrides::load(p)?,
        None => Overrides::default(),
    };
    let env = Env {
        weights: cli.weights,
        out: cli.out,
        seed: cli.seed,
        overrides,
    };
    match cli.command {
        Command::Enhance(a) => {
            let written = commands::enhance(
                &env,
                &EnhanceOptions {
                    input: a.input,
                    orientations: a.orientations.map(|n| n as usize),
                    composite: !a.no_composite,
                },
            )?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Register(a) => {
            let r = commands::register_cmd(
                &env,
                &RegisterOptions {
                    reference: a.reference,
                    floating: a.floating,
                    levels: a.levels.map(|n| n as usize),
                    max_iters: a.max_iters.map(|n| n as usize),
                    out_transform: a.out_transform,
                    out_overlay: a.out_overlay,
                    ground_truth: a.ground_truth,
                },
            )?;
            println!("affine {:?}", r.a_hat.params());
            println!("objective {:.6e} converged {}", r.objective, r.converged);
            if let Some((e, c)) = r.errors {
                println!("aee {e:.4} ace {c:.4}");
            }
        }
        Command::Eval(a) => {
            let csv = a.csv.unwrap_or_else(|| "eval.csv".into());
            let r = commands::eval(&env, &a.manifest, &csv)?;
            println!("{} jobs, results in {}", r.results.len(), r.csv.display());
        }
        Command::Report(a) => {
            let csv = a.csv.unwrap_or_else(|| "report.csv".into());
            let r = commands::report(&env, &a.manifest, &csv)?;
            if let (Some(e), Some(c)) = (&r.aee, &r.ace) {
                commands::print_summary(&mut std::io::stdout().lock(), e, c).context("writing summary")?;
            }
            println!("results in {}", r.csv.display());
        }
        Command::Tune(a) => {
            let r = commands::tune_cmd(
                &env,
                &TuneOptions {
                    data: a.data,
                    init_weights: a.init_weights,
                    out_weights: a.out_weights,
                    history: a.history,
                    iters: a.iters,
                },
            )?;
            println!(
                "validation loss {:.6} -> {:.6} ({:.3}x)",
                r.initial_loss,
                r.best_loss,
                r.best_loss / r.initial_loss
            );
            println!("weights in {}, history in {}", r.weights.display(), r.history.display());
        }
        Command::Synth(a) => {
            let m = commands::synth(
                &env,
                &SynthOptions {
                    size: a.size,
                    aligned: a.aligned,
                },
            )?;
            println!("{}", m.display());
        }
    }
    Ok(())
}
