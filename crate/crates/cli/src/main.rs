use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use granular::harness::{self, ExperimentConfig, Mode, PRESETS};

/// Granular gas simulations and collision-operator checks.
#[derive(Parser)]
#[command(name = "granular", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Particle run with conservation and dissipation checks.
    Simulate(RunArgs),
    /// Long rescaled run: profile stationarity, tails, moments, positivity.
    Selfsim(RunArgs),
    /// Gain and loss operator cross-checks.
    Qcheck(RunArgs),
    /// Cooling-law fit of an energy series.
    Haff(RunArgs),
    /// Tail-order fit of a radial profile.
    Tail(RunArgs),
    /// Moment series between original and rescaled frames.
    Transfer(RunArgs),
    /// Rebuilds the report of a finished output directory.
    Report(RunArgs),
    /// Distance growth between two nearby runs.
    Stability(RunArgs),
    /// Lists the built-in presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input file or directory for haff, tail, transfer and report.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn load(mode: Mode, args: &RunArgs) -> granular::Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => harness::parse_config(path)?,
        (None, Some(name)) => harness::preset(name)?,
        (None, None) => {
            let mut c = ExperimentConfig::new(mode);
            c.output.directory = PathBuf::from(format!("out/{}", mode.name()));
            c
        }
    };
    if cfg.mode != mode {
        return Err(granular::Error::Config(vec![format!(
            "configuration is for mode {:?}, but the subcommand is {:?}",
            cfg.mode.name(),
            mode.name()
        )]));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.directory = out.clone();
    }
    if let Some(input) = &args.input {
        cfg.analysis.input = Some(input.clone());
        // A rebuilt report lands next to its inputs unless told otherwise.
        if mode == Mode::Report && args.out.is_none() && args.config.is_none() {
            cfg.output.directory = input.clone();
        }
    }
    Ok(cfg)
}

fn run(mode: Mode, args: &RunArgs) -> granular::Result<bool> {
    let cfg = load(mode, args)?;
    let report = harness::execute(&cfg)?;
    print!("{}", report.summary());
    println!("outputs written to {}", cfg.output.directory.display());
    Ok(report.all_pass())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Selfsim(a) => (Mode::Selfsim, a),
        Command::Qcheck(a) => (Mode::Qcheck, a),
        Command::Haff(a) => (Mode::Haff, a),
        Command::Tail(a) => (Mode::Tail, a),
        Command::Transfer(a) => (Mode::Transfer, a),
        Command::Report(a) => (Mode::Report, a),
        Command::Stability(a) => (Mode::Stability, a),
        Command::Presets => {
            for name in PRESETS {
                let cfg = harness::preset(name).expect("built-in preset");
                println!("{name:<16} {}", cfg.mode.name());
            }
            return ExitCode::SUCCESS;
        }
    };
    match run(mode, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
