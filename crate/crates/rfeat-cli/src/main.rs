//! `rfeat`: experiment driver for robust/non-robust feature studies.
//!
//! Every subcommand reads one strict JSON config, writes its artifacts and
//! a run manifest into `--out`, and reports pass/fail check lines.
//!
//! Exit codes: 0 when all requested checks pass, 1 when any check fails,
//! 2 on configuration or I/O errors.

mod cmd;
mod configs;
mod dataio;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use configs::load_config;

#[derive(Parser)]
#[command(
    name = "rfeat",
    version,
    about = "Robust/non-robust feature experiments: Gaussian theory, training, attacks, and dataset surgery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config (strict: unknown keys are rejected).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports and artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-pool size for per-sample loops. Results are bit-identical for
    /// any value; without the `parallel` build feature this is a no-op.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form Gaussian suite: optimal perturbations, robust fits,
    /// vulnerability gaps, alignment, concentration.
    Theory(Common),
    /// Full dataset-surgery study: source models, derived datasets,
    /// retraining, directional checks.
    Pipeline(Common),
    /// Generate a synthetic dataset.
    GenData(Common),
    /// Train one classifier.
    Train(Common),
    /// Attack a saved model over a dataset.
    Attack(Common),
    /// Build a robustified or relabeled dataset against a saved model.
    Distill(Common),
    /// Train several architectures and measure attack transfer.
    Transfer(Common),
    /// Score saved models on a dataset.
    Eval(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Theory(c)
            | Command::Pipeline(c)
            | Command::GenData(c)
            | Command::Train(c)
            | Command::Attack(c)
            | Command::Distill(c)
            | Command::Transfer(c)
            | Command::Eval(c) => c,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// Loads a config and applies the `--seed` override.
fn load_effective<T>(common: &Common) -> Result<T>
where
    T: serde::de::DeserializeOwned + configs::Seeded,
{
    let mut config: T = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        *config.seed_mut() = seed;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<bool> {
    let common = cli.command.common();
    init_thread_pool(common.threads);
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;

    match &cli.command {
        Command::Theory(c) => cmd::theory::run(&load_effective(c)?, &c.out),
        Command::Pipeline(c) => cmd::pipeline::run(&load_effective(c)?, &c.out),
        Command::GenData(c) => cmd::gen_data::run(&load_effective(c)?, &c.out),
        Command::Train(c) => cmd::train::run(&load_effective(c)?, &c.out),
        Command::Attack(c) => cmd::attack::run(&load_effective(c)?, &c.out),
        Command::Distill(c) => cmd::distill::run(&load_effective(c)?, &c.out),
        Command::Transfer(c) => cmd::transfer::run(&load_effective(c)?, &c.out),
        Command::Eval(c) => cmd::eval::run(&load_effective(c)?, &c.out),
    }
}

/// Sizes the rayon pool when built with the `parallel` feature. The
/// orchestrator itself stays single-threaded; only per-sample library loops
/// fan out, and their reductions are sequential, so any pool size gives
/// bit-identical results.
#[cfg(feature = "parallel")]
fn init_thread_pool(threads: Option<usize>) {
    if let Some(n) = threads {
        // A second initialization (tests invoking run() repeatedly) is fine:
        // the pool is process-global.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_thread_pool(threads: Option<usize>) {
    if threads.is_some() {
        eprintln!("note: built without the `parallel` feature; --threads has no effect");
    }
}
