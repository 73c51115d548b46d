use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tbi_cli::commands::{
    cmd_bell_curve, cmd_critical_noise, cmd_dwell_times, cmd_fit_cosine, cmd_fit_mixture,
    cmd_simulate_charge_histogram, cmd_simulate_histogram, cmd_simulate_rabi_scan,
    cmd_simulate_tbi_point, cmd_simulate_trace, CommandContext,
};
use tbi_cli::{CliResult, RunConfig, TableFormat};

#[derive(Parser)]
#[command(
    name = "tbi",
    about = "Simulates single-spin readout through an NV center and evaluates the two-time correlation bound Q(0,2t) - Q(0,t)^2",
    version
)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread override (never affects results).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Data-table output format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Bound curve B(t) for ideal and damped driving (closed form).
    BellCurve,
    /// Monte Carlo simulation of the measurement protocol.
    Simulate {
        #[command(subcommand)]
        what: SimulateCommand,
    },
    /// Fits of scan or histogram data.
    Fit {
        #[command(subcommand)]
        model: FitCommand,
    },
    /// Damping rate at which the violation disappears.
    CriticalNoise,
    /// Dwell-time extraction from a fluorescence trace.
    DwellTimes {
        /// Trace CSV (bin_start_s, count); simulated when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Survival probability over a pulse-duration grid.
    RabiScan,
    /// High-accuracy bound evaluation at one time.
    TbiPoint,
    /// Charge-blinking fluorescence trace.
    Trace,
    /// Photon-count histogram of repeated nuclear readouts.
    Histogram,
    /// Photon-count histogram of charge measurements after green reset.
    ChargeHistogram,
}

#[derive(Subcommand)]
enum FitCommand {
    /// Damped-cosine fit of (tau, q, stderr) data.
    Cosine {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Two-component Poisson mixture fit of count data.
    Mixture {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    let config = load_config(&cli)?;
    let format = match cli.format {
        FormatArg::Csv => TableFormat::Csv,
        FormatArg::Json => TableFormat::Json,
    };
    let ctx = CommandContext::new(config, format);
    match cli.command {
        Command::BellCurve => cmd_bell_curve(&ctx),
        Command::Simulate { what } => match what {
            SimulateCommand::RabiScan => cmd_simulate_rabi_scan(&ctx),
            SimulateCommand::TbiPoint => cmd_simulate_tbi_point(&ctx),
            SimulateCommand::Trace => cmd_simulate_trace(&ctx),
            SimulateCommand::Histogram => cmd_simulate_histogram(&ctx),
            SimulateCommand::ChargeHistogram => cmd_simulate_charge_histogram(&ctx),
        },
        Command::Fit { model } => match model {
            FitCommand::Cosine { input } => cmd_fit_cosine(&ctx, input),
            FitCommand::Mixture { input } => cmd_fit_mixture(&ctx, input),
        },
        Command::CriticalNoise => cmd_critical_noise(&ctx),
        Command::DwellTimes { input } => cmd_dwell_times(&ctx, input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).unwrap_or_default()
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::FAILURE
        }
    }
}
