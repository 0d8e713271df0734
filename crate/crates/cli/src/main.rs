//! `fuzzproc`: runs equilibration experiments from JSON configs.
//!
//! Exit status: 0 when every inequality check passes, 1 on runtime or I/O
//! errors, 2 on an invalid config (nothing is written), 3 when a check
//! fails (artifacts plus a repro file are written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fuzzproc::config::ExperimentConfig;
use fuzzproc::experiment::{run_experiment, RunOptions};

const SCHEMA: &str = include_str!("../../../schema/experiment.schema.json");

#[derive(Parser)]
#[command(name = "fuzzproc", version, about = "Equilibration bounds for multi-time processes with fuzzy waiting times")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV and JSON results.
    Run {
        config: PathBuf,
        /// Output directory (default: the config's "output", else ".").
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Print the JSON schema of experiment configs.
    Schema,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, ExitCode> {
    let source = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(2)
    })?;
    ExperimentConfig::parse_with_seed(&source, seed).map_err(|e| {
        eprintln!("error: {}:{e}", path.display());
        ExitCode::from(2)
    })
}

fn run(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let config = match load(config_path, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    log::info!("running {} experiment with seed {}", config.kind.name(), config.seed);
    match run_experiment(&config, &RunOptions { out_dir: out }) {
        Ok(outcome) => {
            log::info!("wrote {} and {}", outcome.csv.display(), outcome.json.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                for v in &outcome.violations {
                    eprintln!("violation: {} (excess {:e})", v.check, v.excess);
                }
                if let Some(repro) = &outcome.repro {
                    eprintln!("repro: {}", repro.display());
                }
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            jobs,
            verbose,
        } => {
            let level = if verbose { "info" } else { "warn" };
            env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
            if let Some(jobs) = jobs {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
                    eprintln!("error: cannot start {jobs} workers: {e}");
                    return ExitCode::from(1);
                }
            }
            run(&config, out, seed)
        }
        Command::Validate { config } => match load(&config, None) {
            Ok(c) => {
                println!("{}: valid {} config", config.display(), c.kind.name());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Schema => {
            print!("{SCHEMA}");
            ExitCode::SUCCESS
        }
    }
}
