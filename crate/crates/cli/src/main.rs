//! `netdof` command-line front end.
//!
//! Every command reads an optional TOML config; flags override its fields.
//! Logs go to stderr, results to files under `--out`. A failed run writes
//! `errors.json` there and exits nonzero.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commands::Failure;
use config::{Overrides, RunConfig};

/// Worker count for parallel sweeps and batched evaluation.
const THREADS_ENV: &str = "NETDOF_THREADS";

#[derive(Parser)]
#[command(name = "netdof", version, about = "Degrees of freedom, compression and rate experiments for ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Per-layer kernel spectra, degree-of-freedom curves and decay fits.
    Analyze,
    /// Balanced λ and widths per layer plus the generalization bound terms.
    Plan,
    /// Compress a model by leverage-score node sampling.
    Compress,
    /// Rate sweeps for each configured (teacher, estimator) pair.
    Experiment,
    /// Build a teacher model (and a dataset when `--n` is given).
    Teacher,
}

#[derive(Args)]
struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Comma-separated sample sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long, global = true, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Comma-separated λ per kernel layer.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Sample size for `plan`, or rows of data written by `teacher`.
    #[arg(long, global = true)]
    n: Option<usize>,
}

#[derive(Serialize)]
struct ErrorFile<'a> {
    command: &'a str,
    errors: &'a [Failure],
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Analyze => "analyze",
        Command::Plan => "plan",
        Command::Compress => "compress",
        Command::Experiment => "experiment",
        Command::Teacher => "teacher",
    }
}

fn configure(flags: Flags) -> anyhow::Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        model: flags.model,
        data: flags.data,
        out: flags.out,
        seed: flags.seed,
        sigma: flags.sigma,
        delta: flags.delta,
        n_grid: flags.n_grid,
        seeds: flags.seeds,
        widths: flags.widths,
        lambda: flags.lambda,
        n: flags.n,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command, cfg: &RunConfig) -> commands::Outcome {
    match command {
        Command::Analyze => commands::analyze(cfg),
        Command::Plan => commands::plan(cfg),
        Command::Compress => commands::compress(cfg),
        Command::Experiment => commands::experiment(cfg),
        Command::Teacher => commands::teacher(cfg),
    }
}

fn set_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("{THREADS_ENV}={v:?} is not a positive integer"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let name = command_name(cli.command);
    let fallback_out = cli.flags.out.clone().unwrap_or_else(|| PathBuf::from("out"));

    let result = set_threads().and_then(|_| configure(cli.flags)).map(|cfg| {
        let failures = run(cli.command, &cfg);
        (cfg.out, failures)
    });
    let (out, failures) = match result {
        Ok((out, Ok(f))) => (out, f),
        Ok((out, Err(e))) => (out, vec![Failure { context: name.into(), message: format!("{e:#}") }]),
        Err(e) => (fallback_out, vec![Failure { context: "config".into(), message: format!("{e:#}") }]),
    };
    if failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in &failures {
        log::error!("{}: {}", f.context, f.message);
    }
    let written = std::fs::create_dir_all(&out)
        .map_err(anyhow::Error::from)
        .and_then(|_| {
            netdof::io::write_json(&out.join("errors.json"), &ErrorFile { command: name, errors: &failures })
                .map_err(anyhow::Error::from)
        });
    if let Err(e) = written {
        log::error!("could not write errors.json: {e:#}");
    }
    ExitCode::FAILURE
}
