//! `msgwtcn` command-line pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Failure with its process exit code: 2 configuration, 3 i/o, 4 numerical.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError { code: 3, msg: msg.into() }
    }
}

impl From<msgwtcn::Error> for CliError {
    fn from(e: msgwtcn::Error) -> Self {
        use msgwtcn::Error as E;
        let code = match &e {
            E::Io(_) | E::MalformedCsv { .. } | E::NonUniformSpacing { .. } | E::ChecksumMismatch | E::VersionMismatch(_) => 3,
            E::NonFinite(_) | E::NoConvergence(_) | E::NotSymmetric(_) => 4,
            _ => 2,
        };
        CliError { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "msgwtcn", version, about = "Multi-scale graph wavelet temporal convolution network for traffic forecasting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving every artifact.
    #[arg(long, default_value = "msgwtcn-out")]
    pub outdir: PathBuf,
    /// Top-level seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one config key, e.g. `--set train.max_epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads; 1 runs the sequential path.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a synthetic graph and speed series.
    GenSynth(Common),
    /// Train a model; writes model.ckpt, history.csv and metrics.json.
    Train(Common),
    /// Score a checkpoint; prints {mae, rmse_norm, rmse_denorm}.
    Evaluate(Common),
    /// Write denormalized predictions for every window of a split.
    Predict(Common),
    /// Weight-matrix diagonal report and link ranking of a checkpoint.
    Analyze(Common),
    /// Retrain over scale sets and node subsets.
    Ablate(Common),
    /// Single-scale sensitivity scan.
    ScaleScan(Common),
}

const SUBCOMMANDS: [&str; 7] = ["gen-synth", "train", "evaluate", "predict", "analyze", "ablate", "scale-scan"];

fn main() -> ExitCode {
    let help = config::keys_help();
    let mut command = Cli::command();
    for name in SUBCOMMANDS {
        command = command.mut_subcommand(name, |s| s.after_help(help.clone()));
    }
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.cmd {
        Cmd::GenSynth(c) => commands::run(c, commands::gen_synth),
        Cmd::Train(c) => commands::run(c, commands::train),
        Cmd::Evaluate(c) => commands::run(c, commands::evaluate),
        Cmd::Predict(c) => commands::run(c, commands::predict),
        Cmd::Analyze(c) => commands::run(c, commands::analyze),
        Cmd::Ablate(c) => commands::run(c, commands::ablate),
        Cmd::ScaleScan(c) => commands::run(c, commands::scale_scan),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
