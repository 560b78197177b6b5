use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cnas_core::config::RunConfig;
use cnas_core::report::report;
use cnas_core::runner::{run, RunOptions};

#[derive(Parser)]
#[command(name = "cnas", version, about = "Continual neural architecture search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a class-incremental stream end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the newest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Threads for candidate training.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge run directories into mean ± std series.
    Report {
        /// Run directories, or directories containing runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Check a configuration file without touching any data.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

const INVALID_CONFIG: u8 = 2;
const RUNTIME_FAILURE: u8 = 1;

fn load_config(path: &Path) -> Result<RunConfig, ExitCode> {
    let cfg = RunConfig::load(path).and_then(|cfg| cfg.validate().map(|()| cfg));
    cfg.map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(INVALID_CONFIG)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ValidateConfig { config } => match load_config(&config) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run {
            config,
            seed,
            resume,
            workers,
            out,
        } => {
            let mut cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(workers) = workers {
                cfg.workers = workers;
            }
            if let Some(out) = out {
                cfg.out = out;
            }
            if let Err(e) = cfg.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(INVALID_CONFIG);
            }
            let opts = RunOptions {
                resume,
                stop_after: None,
            };
            match run(&cfg, &opts) {
                Ok(outcome) => {
                    let last = outcome.reports.last().expect("base step");
                    println!(
                        "{}: {} steps, {} classes, final AIA {:.4}, {} parameters",
                        cfg.out.display(),
                        outcome.reports.len(),
                        last.classes_seen,
                        last.aia,
                        last.params
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(RUNTIME_FAILURE)
                }
            }
        }
        Command::Report { runs, out } => match report(&runs, &out) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(RUNTIME_FAILURE)
            }
        },
    }
}
