//! `pmsda` — experiment harness for progressive multi-source domain
//! adaptation on synthetic subject domains.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 I/O or missing input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

#[derive(Parser)]
#[command(name = "pmsda", version, about = "Progressive multi-source domain adaptation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benchmark subject files plus a manifest.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank sources against the target and emit the similarity table.
    Rank {
        #[arg(long)]
        config: PathBuf,
        /// Ranking criterion: cosine or mmd.
        #[arg(long)]
        criterion: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured strategy over one or more seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seed list overriding the config.
        #[arg(long)]
        seed: Option<String>,
        /// Strategy overriding the config.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis (replay_variant, source_strategy, gamma, tau0).
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values overriding the axis defaults.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate traces from a run directory into plot-ready CSV files.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("PMSDA_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| CliError::config(format!("invalid PMSDA_THREADS value {raw:?}")))?;
        if n == 0 {
            return Err(CliError::config("PMSDA_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn parse_seed_list(raw: &str) -> Result<Vec<u64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::config(format!("invalid seed {s:?}")))
        })
        .collect()
}

fn run() -> Result<(), CliError> {
    configure_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_generate(&cfg, out.as_deref())
        }
        Command::Rank {
            config,
            criterion,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_rank(&cfg, criterion.as_deref(), out.as_deref())
        }
        Command::Train {
            config,
            seed,
            strategy,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seeds = seed.as_deref().map(parse_seed_list).transpose()?;
            commands::cmd_train(&cfg, seeds, strategy.as_deref(), out.as_deref())
        }
        Command::Ablate {
            config,
            axis,
            values,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_ablate(&cfg, &axis, values.as_deref(), out.as_deref())
        }
        Command::Report { run_dir, out } => commands::cmd_report(&run_dir, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
