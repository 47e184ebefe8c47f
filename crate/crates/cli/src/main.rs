//! `pact`: synthesize data, train and compare tabular models, and verify
//! run directories.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (divergence, failed gradient check).

mod commands;
mod config;
mod manifest;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pact_core::models::ModelKind;
use pact_core::Error;

use crate::commands::SynthArgs;
use crate::config::Config;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "pact", version, about = "Tabular transformers with proximity-aware contextual tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (relative paths go under $PACT_OUTPUT_ROOT if set).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv + description.json).
    Synth {
        #[command(flatten)]
        common: Common,
        /// Generator preset: benchmark or linear.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train one model with one seed and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<ModelKind>,
        /// Training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on the configured test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Multi-seed comparison of the configured models.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Restrict to these models (repeatable).
        #[arg(long = "model")]
        models: Vec<ModelKind>,
        /// First seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of seeds.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Test metrics as a function of the training-set fraction.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long = "model")]
        models: Vec<ModelKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated fractions in (0, 1].
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Random hyperparameter search on the validation split.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<ModelKind>,
        /// Search seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Finite-difference check of every primitive and model gradient.
    Gradcheck {
        /// Models to check (repeatable); defaults to pact.
        #[arg(long = "model")]
        models: Vec<ModelKind>,
        /// Use the small test configuration instead of the defaults.
        #[arg(long)]
        small: bool,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-check a run directory against its manifest.
    Verify {
        /// Run directory containing manifest.json.
        dir: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Precondition(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::Diverged { .. } | Error::SearchFailed { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn load(common: &Common) -> pact_core::Result<Config> {
    Config::load(common.config.as_deref())
}

fn run(cli: Cli) -> pact_core::Result<u8> {
    let dir = |c: &Common, name: &str| commands::output_dir(c.out.as_deref(), name);
    let path = |c: &Common| c.config.clone();
    let ok = match cli.command {
        Command::Synth {
            common,
            preset,
            n,
            seed,
            gamma,
            sigma,
        } => {
            let mut cfg = load(&common)?;
            let args = SynthArgs {
                preset,
                n,
                seed,
                gamma,
                sigma,
            };
            commands::synth(&mut cfg, args, path(&common).as_deref(), &dir(&common, "synth"))?
        }
        Command::Train { common, model, seed } => {
            let mut cfg = load(&common)?;
            commands::train(&mut cfg, model, seed, path(&common).as_deref(), &dir(&common, "train"))?
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            commands::eval(&cfg, &checkpoint, path(&common).as_deref(), &dir(&common, "eval"))?
        }
        Command::Benchmark {
            common,
            models,
            seed,
            seeds,
        } => {
            let mut cfg = load(&common)?;
            cfg.first_seed = seed.unwrap_or(cfg.first_seed);
            cfg.seeds = seeds.unwrap_or(cfg.seeds);
            commands::benchmark(&cfg, &models, path(&common).as_deref(), &dir(&common, "benchmark"))?
        }
        Command::Scaling {
            common,
            models,
            seed,
            seeds,
            fractions,
        } => {
            let mut cfg = load(&common)?;
            cfg.first_seed = seed.unwrap_or(cfg.first_seed);
            cfg.seeds = seeds.unwrap_or(cfg.seeds);
            if let Some(f) = fractions {
                cfg.fractions = f;
            }
            commands::scaling(&cfg, &models, path(&common).as_deref(), &dir(&common, "scaling"))?
        }
        Command::Search {
            common,
            model,
            seed,
            budget,
        } => {
            let mut cfg = load(&common)?;
            commands::search(&mut cfg, model, seed, budget, path(&common).as_deref(), &dir(&common, "search"))?
        }
        Command::Gradcheck {
            models,
            small,
            batch,
            seed,
        } => {
            if !commands::gradcheck(&models, small, batch, seed)? {
                return Ok(EXIT_NUMERIC);
            }
            true
        }
        Command::Verify { dir } => {
            let issues = verify::verify(Path::new(&dir))?;
            for i in &issues {
                println!("{i}");
            }
            if !issues.is_empty() {
                return Ok(EXIT_DATA);
            }
            println!("{}: consistent", dir.display());
            true
        }
    };
    Ok(if ok { 0 } else { EXIT_DATA })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
