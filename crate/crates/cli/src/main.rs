mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gspect_core::{BasisMode, Variant};

use crate::config::{FileConfig, Overrides, Resolved};
use crate::error::CliError;

/// Cross-scale graph classification experiments.
#[derive(Debug, Parser)]
#[command(name = "gspect", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Base random seed. Multi-seed commands use `seed, seed+1, ...`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON config file with a `schema_version` field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// TU dataset directory.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Number of seeds for multi-seed commands.
    #[arg(long, global = true)]
    seeds: Option<usize>,

    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,

    /// Wavelet scales, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    scales: Option<Vec<f64>>,

    /// Chebyshev order M.
    #[arg(long, global = true)]
    order: Option<usize>,

    #[arg(long, global = true)]
    m_out: Option<usize>,

    #[arg(long, global = true)]
    n_max: Option<usize>,

    /// `fitted_kernel` or `closed_form`.
    #[arg(long, global = true, value_parser = parse_basis_mode)]
    basis_mode: Option<BasisMode>,

    /// Link-prediction weight in [0, 1].
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,

    #[arg(long, global = true)]
    epochs: Option<usize>,

    #[arg(long = "lr", global = true)]
    learning_rate: Option<f64>,

    #[arg(long, global = true)]
    batch_size: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the synthetic multi-scale benchmark.
    Generate,
    /// Train one model and save its best-validation checkpoint.
    Train,
    /// Score a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Score every graph instead of the seed's test split.
        #[arg(long)]
        all: bool,
    },
    /// Compare the four architecture variants.
    Ablate,
    /// Accuracy as one hyperparameter varies.
    Sweep {
        /// Numbers of wavelet scales, comma separated.
        #[arg(long = "sweep-f", value_delimiter = ',')]
        f: Option<Vec<usize>>,
        /// Chebyshev orders, comma separated.
        #[arg(long = "sweep-m", value_delimiter = ',')]
        m: Option<Vec<usize>>,
        /// Link-prediction weights, comma separated.
        #[arg(long = "sweep-beta", value_delimiter = ',')]
        beta: Option<Vec<f64>>,
    },
    /// Empirical Lipschitz checks on a freshly initialized model.
    Stability {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        graphs: Option<usize>,
    },
    /// Dataset summary statistics.
    Stats,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: gspect_core::Error| e.to_string())
}

fn parse_basis_mode(s: &str) -> Result<BasisMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unknown basis mode `{s}` (expected fitted_kernel or closed_form)"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let out = c
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out <DIR> is required".into()))?;
    let file = match &c.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let overrides = Overrides {
        seed: c.seed,
        seeds: c.seeds,
        dataset: c.dataset.clone(),
        variant: c.variant,
        scales: c.scales.clone(),
        order: c.order,
        m_out: c.m_out,
        n_max: c.n_max,
        basis_mode: c.basis_mode,
        beta: c.beta,
        epochs: c.epochs,
        learning_rate: c.learning_rate,
        batch_size: c.batch_size,
    };
    let mut cfg = Resolved::new(file, &overrides)?;
    commands::ensure_dir(&out)?;
    match cli.command {
        Command::Generate => commands::generate(&cfg, &out),
        Command::Train => commands::train(&cfg, &out),
        Command::Evaluate { checkpoint, all } => commands::evaluate(&cfg, &out, &checkpoint, all),
        Command::Ablate => commands::ablate(&cfg, &out),
        Command::Sweep { f, m, beta } => {
            let sweep = &mut cfg.file.sweep;
            if f.is_some() || m.is_some() || beta.is_some() {
                sweep.f = f;
                sweep.m = m;
                sweep.beta = beta;
            }
            commands::sweep(&cfg, &out)
        }
        Command::Stability { trials, graphs } => {
            let s = &mut cfg.file.stability;
            s.trials = trials.unwrap_or(s.trials);
            s.graphs = graphs.unwrap_or(s.graphs);
            commands::stability(&cfg, &out)
        }
        Command::Stats => commands::stats(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.common.quiet, cli.common.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
