//! `stablab` — reproducible experiments on the stability and robust
//! generalization of SGD-based adversarial training.
//!
//! Every subcommand reads a flat key-value config (`--config`), optionally
//! overridden by `--seed` and `--out`, and writes its artifacts plus a
//! `manifest.json` into the output directory. Set `STABLAB_CACHE` to a
//! directory to reuse crafted poison populations across runs.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use stablab_core::experiment::{self, RunScope};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "stablab", version, about, arg_required_else_help = true)]
struct Cli {
    /// Worker threads for trial-parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config file (flat key = value format).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the dataset and write dataset.json.
    GenData(RunArgs),
    /// One reference training run: trajectory record and snapshots.
    Train(RunArgs),
    /// Measure on-average stability and the measured-vs-bound ordering.
    Stability(RunArgs),
    /// Estimate constants and evaluate every bound over the budget sweep.
    Bounds(RunArgs),
    /// Generate the poisoned dataset for the config's poison section.
    Poison(RunArgs),
    /// The full pipeline: sweep, stability, poisoning, plot data.
    Run(RunArgs),
    /// Merge artifact directories into comparison tables.
    Report {
        /// Output directory for report.csv and summary.txt.
        #[arg(long)]
        out: PathBuf,
        /// Artifact directories produced by earlier runs.
        dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("stablab: could not set thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stablab: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => scoped(a, RunScope::GenData),
        Command::Train(a) => scoped(a, RunScope::Train),
        Command::Stability(a) => scoped(a, RunScope::Stability),
        Command::Bounds(a) => scoped(a, RunScope::Bounds),
        Command::Poison(a) => scoped(a, RunScope::Poison),
        Command::Run(a) => scoped(a, RunScope::Full),
        Command::Report { out, dirs } => {
            anyhow::ensure!(
                !dirs.is_empty(),
                "report needs at least one artifact directory"
            );
            experiment::report(&dirs, &out).context("merging artifact directories")?;
            println!("report written to {}", out.display());
            Ok(())
        }
    }
}

fn scoped(args: RunArgs, scope: RunScope) -> Result<()> {
    let set =
        experiment::run_experiment_scoped(&args.config, args.out.as_deref(), args.seed, scope)
            .with_context(|| format!("running {}", args.config.display()))?;
    println!(
        "wrote {} artifacts to {}",
        set.manifest.artifacts.len(),
        set.dir.display()
    );
    Ok(())
}
