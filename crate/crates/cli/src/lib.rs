//! Command-line front end for the `stochastic-es` library.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod models;
pub mod output;
pub mod plot;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, ExperimentKind};
use error::CliError;
use output::{sha256_hex, Outputs, RunInfo};

#[derive(Debug, Parser)]
#[command(
    name = "stoch-es",
    version,
    about = "Stochastic averaging and extremum-seeking experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Iterate the original system along one replication.
    Simulate(Common),
    /// Iterate the discrete average and integrate the continuous one.
    Average(Common),
    /// Compare original and average paths over a range of step sizes.
    VerifyAveraging(Common),
    /// Static-map extremum seeking.
    EsStatic(Common),
    /// Reduced and closed-loop dynamic extremum seeking.
    EsDynamic(Common),
    /// Local stability of the dynamic average system.
    Stability(Common),
    /// Sine moments of Gaussian probes and truncated-noise atoms.
    Moments(Common),
    /// Render one column of a CSV output as plot.dat and plot.svg.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub column: Option<String>,
    /// Horizontal reference line.
    #[arg(long, allow_hyphen_values = true)]
    pub reference: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Command {
    fn kind(&self) -> Option<ExperimentKind> {
        Some(match self {
            Self::Simulate(_) => ExperimentKind::Simulate,
            Self::Average(_) => ExperimentKind::Average,
            Self::VerifyAveraging(_) => ExperimentKind::VerifyAveraging,
            Self::EsStatic(_) => ExperimentKind::EsStatic,
            Self::EsDynamic(_) => ExperimentKind::EsDynamic,
            Self::Stability(_) => ExperimentKind::Stability,
            Self::Moments(_) => ExperimentKind::Moments,
            Self::Plot(_) => return None,
        })
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let kind = cli.command.kind();
    let common = match cli.command {
        Command::Plot(args) => return plot(args, start),
        Command::Simulate(c)
        | Command::Average(c)
        | Command::VerifyAveraging(c)
        | Command::EsStatic(c)
        | Command::EsDynamic(c)
        | Command::Stability(c)
        | Command::Moments(c) => c,
    };
    let kind = kind.expect("not plot");
    let (config, text) = ExperimentConfig::load(&common.config)?;
    if config.experiment != kind {
        return Err(CliError::Config(format!(
            "config describes a `{}` experiment but `{}` was requested",
            config.experiment.name(),
            kind.name()
        )));
    }
    let seed = common.seed.unwrap_or(config.seed);
    let dir = common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let outputs = pool.install(|| execute(&config, kind, seed))?;
    outputs.write(
        &dir,
        RunInfo {
            subcommand: kind.name(),
            config_sha256: Some(sha256_hex(text.as_bytes())),
            seed: Some(seed),
            wall_time: start.elapsed(),
        },
    )
}

/// Runs one experiment and returns its output files without touching disk.
pub fn execute(config: &ExperimentConfig, kind: ExperimentKind, seed: u64) -> Result<Outputs, CliError> {
    match kind {
        ExperimentKind::Simulate => commands::simulate(config, seed),
        ExperimentKind::Average => commands::average(config, seed),
        ExperimentKind::VerifyAveraging => commands::verify_averaging(config, seed),
        ExperimentKind::EsStatic => commands::es_static(config, seed),
        ExperimentKind::EsDynamic => commands::es_dynamic(config, seed),
        ExperimentKind::Stability => commands::stability(config),
        ExperimentKind::Moments => commands::moments(config),
    }
}

fn plot(args: PlotArgs, start: Instant) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.input.display())))?;
    let series = plot::read_series(&text, args.column.as_deref())?;
    let outputs = plot::render(&series, args.reference);
    outputs.write(
        &args.out,
        RunInfo {
            subcommand: "plot",
            config_sha256: None,
            seed: None,
            wall_time: start.elapsed(),
        },
    )
}
