use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use daclab_cli::{cmd_ablate, cmd_report, cmd_run, CliError, ExperimentConfig, Loaded, SEED_ENV};

/// Distributed continual learning with data-agnostic consolidation.
#[derive(Debug, Parser)]
#[command(name = "daclab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured scheme for every seed.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed (overrides the seed list and DACLAB_SEED).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat the experiment once per consolidation source.
    AblateSources {
        config: PathBuf,
        /// Comma-separated source names.
        #[arg(long, value_delimiter = ',', required = true)]
        sources: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Linear probes and CKA for the self-centered models of a finished run.
    Report { run_dir: PathBuf },
}

fn load(config: &Path, seed: Option<u64>) -> Result<Loaded, CliError> {
    let mut cfg = ExperimentConfig::read(config)?;
    cfg.apply_seed_override(seed, std::env::var(SEED_ENV).ok().as_deref())?;
    Ok(cfg.validate()?)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let loaded = load(&config, seed)?;
            let out = out.unwrap_or_else(|| loaded.config.output_dir.clone());
            cmd_run(&loaded, &out)?;
            println!("{}", out.display());
        }
        Command::AblateSources {
            config,
            sources,
            out,
            seed,
        } => {
            let loaded = load(&config, seed)?;
            let out = out.unwrap_or_else(|| loaded.config.output_dir.clone());
            cmd_ablate(&loaded, &sources, &out)?;
            println!("{}", out.join("ablation_summary.csv").display());
        }
        Command::Report { run_dir } => {
            for dir in cmd_report(&run_dir)? {
                println!("{}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("daclab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
