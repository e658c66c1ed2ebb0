mod commands;
mod config;
mod flowfile;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failures are bucketed by who has to act: exit 2 means the invocation
/// or configuration is wrong, 3 means the run was fine but produced too
/// little data to report, 4 means a certificate or self-test check failed.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("{0}")]
    Certificate(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Insufficient(_) => 3,
            CliError::Certificate(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "rwre",
    version,
    about = "Simulation and verification lab for random walks in random environments"
)]
struct Cli {
    /// JSON experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides RWRE_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 sizes the pool to the machine.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (default "out").
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample site transition vectors; write rows as CSV and summarize moments.
    EnvSample,
    /// Sweep box sizes and estimate the non-front exit probability at each.
    PmCheck,
    /// Run a regeneration battery and report renewal statistics.
    Regen,
    /// Estimate the tail exponent of first regeneration times, or of
    /// synthetic Pareto draws when a self-test block is configured.
    Tail,
    /// Average the exact two-site trap survival over sampled environments
    /// and fit its decay exponent.
    TrapTail,
    /// Build the two-box unit flow certificate and verify it.
    FlowBuild,
    /// Re-verify a stored flow certificate, or cross-check the flow solver
    /// against the cut oracle on random instances.
    FlowVerify {
        /// Certificate file produced by flow-build.
        #[arg(long, conflicts_with = "self_test")]
        flow: Option<PathBuf>,

        /// Number of random feasibility instances to cross-check.
        #[arg(long)]
        self_test: Option<usize>,
    },
    /// Summarize a weight vector against the ballisticity and CLT thresholds.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let resolved = config::resolve(cli.config, cli.seed, cli.threads, cli.out)?;
    if resolved.config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(resolved.config.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let out = output::OutDir::create(&resolved.out)?;
    // The echo deliberately excludes the output path so that the same run
    // into two directories produces byte-identical artifacts.
    out.write_json("resolved_config.json", &resolved.config)?;
    match cli.command {
        Command::EnvSample => commands::env_sample(&resolved.config, &out),
        Command::PmCheck => commands::pm_check(&resolved.config, &out),
        Command::Regen => commands::regen(&resolved.config, &out),
        Command::Tail => commands::tail(&resolved.config, &out),
        Command::TrapTail => commands::trap_tail(&resolved.config, &out),
        Command::FlowBuild => commands::flow_build(&resolved.config, &out),
        Command::FlowVerify { flow, self_test } => {
            commands::flow_verify(&resolved.config, &out, flow.as_deref(), self_test)
        }
        Command::Report => commands::report(&resolved.config, &out),
    }
}
