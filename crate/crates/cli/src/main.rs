use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dds_cli::{
    cmd_check_export, cmd_export, cmd_simulate, cmd_train, cmd_validate, format_validation, load_config, resolve,
};
use dds_core::synth::{generate_dataset, generate_trace};

/// Data-driven simulation of network performance: train a data-rate model,
/// validate it, replay traces through transmission schemes, export code.
#[derive(Parser)]
#[command(name = "dds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model bundle (forest + error model + label range) from a dataset CSV.
    Train {
        /// Dataset CSV (defaults to path.dataset).
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Bundle directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare measured, forest-only, raw GP and DDS-shaped data rates on a dataset.
    Validate {
        /// Model bundle directory (defaults to path.model).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset CSV (defaults to path.dataset).
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Directory for validation_summary.csv and validation_samples.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a trace through the configured transmission schemes.
    Simulate {
        /// Model bundle directory (defaults to path.model).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Trace CSV (defaults to path.trace).
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Directory for events_<scheme>.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the bundle's forest as nested conditional code and verify it.
    Export {
        /// Model bundle directory (defaults to path.model).
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// File to write.
        #[arg(long, required_unless_present = "check")]
        out: Option<PathBuf>,
        /// Re-verify an existing export instead of writing one.
        #[arg(long, conflicts_with = "out")]
        check: Option<PathBuf>,
    },
    /// Generate the synthetic benchmark.
    Synth {
        #[command(subcommand)]
        what: Synth,
    },
}

#[derive(Subcommand)]
enum Synth {
    /// Labelled transmissions.
    Dataset {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// A 1 Hz drive trace with oscillating channel quality.
    Trace {
        #[arg(long, default_value_t = 900)]
        seconds: usize,
        /// Oscillation period in seconds.
        #[arg(long, default_value_t = 60.0)]
        period: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { dataset, common, out } => {
            let cfg = load_config(common.config.as_deref(), common.seed)?;
            let dataset = resolve(dataset, &cfg.dataset, "dataset")?;
            let report = cmd_train(&dataset, &cfg, &out)?;
            println!("{report}");
            println!("model written to {}", out.display());
        }
        Command::Validate {
            model,
            dataset,
            common,
            out,
        } => {
            let cfg = load_config(common.config.as_deref(), common.seed)?;
            let model = resolve(model, &cfg.model, "model")?;
            let dataset = resolve(dataset, &cfg.dataset, "dataset")?;
            let report = cmd_validate(&model, &dataset, &cfg, out.as_deref())?;
            println!("{}", format_validation(&report));
        }
        Command::Simulate {
            model,
            trace,
            common,
            out,
        } => {
            let cfg = load_config(common.config.as_deref(), common.seed)?;
            let model = resolve(model, &cfg.model, "model")?;
            let trace = resolve(trace, &cfg.trace, "trace")?;
            let report = cmd_simulate(&model, &trace, &cfg, &out)?;
            println!("{report}");
        }
        Command::Export {
            model,
            common,
            out,
            check,
        } => {
            let cfg = load_config(common.config.as_deref(), common.seed)?;
            let model = resolve(model, &cfg.model, "model")?;
            if let Some(file) = check {
                let n = cmd_check_export(&model, &cfg, &file)?;
                println!("{} matches the model on {n} random inputs", file.display());
            } else {
                let out = out.context("--out is required")?;
                let report = cmd_export(&model, &cfg, &out)?;
                println!(
                    "exported {} trees ({} bytes) to {}; verified on {} random inputs",
                    report.trees,
                    report.bytes,
                    out.display(),
                    report.checked
                );
            }
        }
        Command::Synth { what } => match what {
            Synth::Dataset { n, seed, out } => {
                generate_dataset(n, seed)?.save(&out)?;
                println!("{n} records written to {}", out.display());
            }
            Synth::Trace {
                seconds,
                period,
                seed,
                out,
            } => {
                generate_trace(seconds, period, seed)?.save(&out)?;
                println!("{seconds} ticks written to {}", out.display());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Skip causes that the message above them already quotes.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    msg = format!("{msg}: {text}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
