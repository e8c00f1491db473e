// SPDX-License-Identifier: MIT OR Apache-2.0

//! `sentlens` command-line experiments.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sentlens::{Error, Result};

use config::{ExperimentConfig, DATA_ENV};
use run::{Context, RunDir};

#[derive(Parser)]
#[command(
    name = "sentlens",
    version,
    about = "Sentiment-direction experiments on GPT-2 style models"
)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the configuration (default 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output root; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit directions and compare them.
    Fit,
    /// Patch pairs along a direction or at whole sites.
    Patch,
    /// Directional, mean or zero ablation.
    Ablate,
    /// Generate with a direction added to the residual stream.
    Steer,
    /// Color text by its projection onto directions.
    Scan {
        /// Text to scan; overrides `scan.text`.
        #[arg(long)]
        text: Option<String>,
    },
    /// Head attribution sweep or path patching.
    Circuit,
    /// Layer or subspace-dimension sweep.
    Sweep,
    /// Per-site mean activations.
    Means,
    /// Activation histogram with sampled contexts.
    Histogram,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Patch => "patch",
            Command::Ablate => "ablate",
            Command::Steer => "steer",
            Command::Scan { .. } => "scan",
            Command::Circuit => "circuit",
            Command::Sweep => "sweep",
            Command::Means => "means",
            Command::Histogram => "histogram",
        }
    }
}

fn execute(cli: Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Command::Scan { text: Some(t) } = &cli.command {
        cfg.scan.text = t.clone();
    }
    if cfg.threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let data_dir = std::env::var_os(DATA_ENV).map(PathBuf::from);
    let run = RunDir::create(cli.command.name(), &cfg)?;
    let ctx = Context::new(cfg, data_dir)?;
    match cli.command {
        Command::Fit => commands::fit(&ctx, &run)?,
        Command::Patch => commands::patch(&ctx, &run)?,
        Command::Ablate => commands::ablate(&ctx, &run)?,
        Command::Steer => commands::steer(&ctx, &run)?,
        Command::Scan { .. } => commands::scan(&ctx, &run)?,
        Command::Circuit => commands::circuit(&ctx, &run)?,
        Command::Sweep => commands::sweep(&ctx, &run)?,
        Command::Means => commands::means(&ctx, &run)?,
        Command::Histogram => commands::histogram(&ctx, &run)?,
    }
    Ok(run.root)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match execute(cli) {
        Ok(root) => {
            println!("{}", root.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sentlens {name}: {e}");
            ExitCode::FAILURE
        }
    }
}
