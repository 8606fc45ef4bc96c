//! `embgen`: train, sample, fit GMM baselines and evaluate speaker-embedding
//! generators from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use embgen::store::DatasetFormat;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "embgen", version, about = "Speaker-embedding generation with a hierarchical VAE")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset file format: manifest_binary or jsonl.
    #[arg(long, global = true)]
    format: Option<DatasetFormat>,
    /// Worker threads (1 = single-threaded).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-speaker dataset with its ground truth.
    SynthData(SynthArgs),
    /// Train a hierarchical VAE.
    Train(TrainArgs),
    /// Draw embeddings from a trained VAE checkpoint or GMM file.
    Sample(SampleArgs),
    /// Fit the GMM baseline, optionally scanning the component count.
    Gmm(GmmArgs),
    /// Build evaluation sets, convert them and compute the similarity report.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    within_std: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    telemetry: Option<PathBuf>,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// VAE checkpoint or GMM model file.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Debug, Args)]
struct GmmArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Scan k over [scan-min, scan-max] and fit the selected value.
    #[arg(long)]
    scan: bool,
    #[arg(long)]
    scan_min: Option<usize>,
    #[arg(long)]
    scan_max: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    generated: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Report JSON path; a text table is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    generated_speakers: Option<usize>,
    #[arg(long)]
    pair_cap: Option<usize>,
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut c.seed, cli.seed);
    set(&mut c.format, cli.format);
    set_opt(&mut c.threads, cli.threads);
    match &cli.command {
        Command::SynthData(a) => {
            let s = &mut c.synth;
            set_opt(&mut s.out, a.out.clone());
            set(&mut s.params.speakers, a.speakers);
            set(&mut s.params.utterances_per_speaker, a.utterances);
            set(&mut s.params.dim, a.dim);
            set(&mut s.params.clusters, a.clusters);
            set(&mut s.params.spread, a.spread);
            set(&mut s.params.within_std, a.within_std);
        }
        Command::Train(a) => {
            let t = &mut c.train;
            set_opt(&mut t.data, a.data.clone());
            set_opt(&mut t.params.checkpoint_path, a.out.clone());
            set_opt(&mut t.params.telemetry_path, a.telemetry.clone());
            set_opt(&mut t.resume, a.resume.clone());
            set(&mut t.params.epochs, a.epochs);
            set(&mut t.params.batch_size, a.batch_size);
            set(&mut t.params.learning_rate, a.lr);
        }
        Command::Sample(a) => {
            let s = &mut c.sample;
            set_opt(&mut s.model, a.model.clone());
            set_opt(&mut s.out, a.out.clone());
            set(&mut s.count, a.count);
            set(&mut s.temperature, a.temperature);
        }
        Command::Gmm(a) => {
            let g = &mut c.gmm;
            set_opt(&mut g.data, a.data.clone());
            set_opt(&mut g.out, a.out.clone());
            set(&mut g.params.k, a.k);
            g.scan |= a.scan;
            set(&mut g.scan_min, a.scan_min);
            set(&mut g.scan_max, a.scan_max);
            set(&mut g.params.max_iters, a.max_iters);
            set_opt(&mut g.report, a.report.clone());
        }
        Command::Eval(a) => {
            let e = &mut c.eval;
            set_opt(&mut e.data, a.data.clone());
            set_opt(&mut e.generated, a.generated.clone());
            set_opt(&mut e.checkpoint, a.checkpoint.clone());
            set_opt(&mut e.out, a.out.clone());
            set(&mut e.params.m, a.m);
            set(&mut e.noise_scale, a.noise_scale);
            set(&mut e.params.generated_speakers, a.generated_speakers);
            set_opt(&mut e.params.pairwise_sample_cap, a.pair_cap);
            set_opt(&mut e.transcripts, a.transcripts.clone());
        }
    }
    c.propagate_seed();
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve(&cli)?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::SynthData(_) => commands::synth_data(&config),
        Command::Train(_) => commands::train(&config),
        Command::Sample(_) => commands::sample(&config),
        Command::Gmm(_) => commands::gmm(&config),
        Command::Eval(_) => commands::eval(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMBGEN_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let diverged = e
                .downcast_ref::<embgen::Error>()
                .is_some_and(|e| matches!(e, embgen::Error::TrainingDiverged { .. }));
            ExitCode::from(if diverged { 3 } else { 1 })
        }
    }
}
