use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod artifacts;
mod commands;
mod config;

use artifacts::Artifacts;
use commands::Outcome;
use config::ExperimentConfig;

/// Attribution-fidelity experiments: block datasets, MLP training,
/// DiffROAR curves, leakage metrics and max-margin theory checks.
#[derive(Parser)]
#[command(name = "diffroar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate train/test datasets.
    GenData,
    /// Train the model under test and log each epoch.
    Train,
    /// Attribute test examples and dump scores and heatmaps.
    Attribute,
    /// Retrain on top-k and bottom-k unmasked data and report AQ.
    Diffroar,
    /// Fraction of top-k attributed coordinates in the null region.
    Leakage,
    /// Numerically verify the max-margin candidates.
    TheoryVerify,
    /// Merge summaries of earlier runs into one table.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Attribute => "attribute",
            Command::Diffroar => "diffroar",
            Command::Leakage => "leakage",
            Command::TheoryVerify => "theory-verify",
            Command::Report => "report",
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::load(path)?;
            cfg.resolve_paths(path.parent().unwrap_or(std::path::Path::new(".")));
            cfg
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut out = Artifacts::create(&cli.out)?;
    let outcome = match cli.command {
        Command::GenData => commands::gen_data(&cfg, &mut out),
        Command::Train => commands::train(&cfg, &mut out),
        Command::Attribute => commands::attribute(&cfg, &mut out),
        Command::Diffroar => commands::diffroar(&cfg, &mut out),
        Command::Leakage => commands::leakage(&cfg, &mut out),
        Command::TheoryVerify => commands::theory_verify(&cfg, &mut out),
        Command::Report => commands::report(&cfg, &mut out),
    }?;
    out.finish(cli.command.name(), &cfg)?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::VerdictFailed) => {
            eprintln!("verification failed; see {}", cli.out.display());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
