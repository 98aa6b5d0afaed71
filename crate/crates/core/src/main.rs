use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use onco_control::config::{load_config, Kind};
use onco_control::scenario::run_scenario;
use onco_control::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

/// Tumor growth, radiotherapy and optimal control scenarios.
#[derive(Parser)]
#[command(name = "onco-control", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exponential, Gompertz and Verhulst growth curves.
    Growth(RunArgs),
    /// Fractionated radiotherapy with linear-quadratic cell kill.
    Fractionated(RunArgs),
    /// Uncontrolled healthy/cancer trajectories and phase portrait.
    Competition(RunArgs),
    /// Equilibria and their linear stability.
    Equilibria(RunArgs),
    /// Trajectories under a constant dose rate.
    ConstantControl(RunArgs),
    /// Optimal dose-rate profile by the direct and indirect solvers.
    Ocp(RunArgs),
    /// Accumulated dose of constant versus optimal protocols.
    DoseReport(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomised initial conditions, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn split(self) -> (Kind, RunArgs) {
        match self {
            Command::Growth(a) => (Kind::Growth, a),
            Command::Fractionated(a) => (Kind::Fractionated, a),
            Command::Competition(a) => (Kind::Competition, a),
            Command::Equilibria(a) => (Kind::Equilibria, a),
            Command::ConstantControl(a) => (Kind::ConstantControl, a),
            Command::Ocp(a) => (Kind::Ocp, a),
            Command::DoseReport(a) => (Kind::DoseReport, a),
        }
    }
}

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("onco-control: {err}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    let (kind, args) = cli.command.split();

    let mut cfg = match load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if cfg.kind() != kind {
        return fail(EXIT_CONFIG, format!("subcommand {kind} does not match configuration kind {}", cfg.kind()));
    }
    if let Some(dir) = args.out {
        cfg.output.dir = dir;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    match run_scenario(&cfg) {
        Ok(report) => {
            println!("{}", report.summary);
            if report.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NOT_CONVERGED)
            }
        }
        Err(e @ Error::Io(_)) => fail(EXIT_CONFIG, e),
        Err(e) if e.is_input_error() => fail(EXIT_CONFIG, e),
        Err(e) => fail(EXIT_NUMERICAL, e),
    }
}
