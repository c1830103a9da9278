use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use datorus_cli::compare::compare;
use datorus_cli::config::Scenario;
use datorus_cli::error::CliError;
use datorus_cli::output::RunManifest;
use datorus_cli::{run_scenario, Overrides};

/// Numerical experiments on volume-preserving DA maps of the 3-torus.
#[derive(Parser)]
#[command(name = "datorus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to DATORUS_WORKERS, then the config.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Cone-field certification only.
    Certify(RunArgs),
    /// Volume-averaged Lyapunov exponents and the exponent inequalities.
    Exponents(RunArgs),
    /// Periodic data of all orbits up to the configured period.
    Periodic(RunArgs),
    /// Semiconjugacy to the linear part.
    Conjugacy(RunArgs),
    /// Invariant bundles, leaves, the foliated box and center holonomy.
    Foliation(RunArgs),
    /// Disintegration of volume along center leaves.
    Disintegrate(RunArgs),
    /// Scaled center-leaf measures.
    Mk(RunArgs),
    /// Every stage in order.
    FullSurvey(RunArgs),
    /// Metric diff of two run manifests.
    Compare { a: PathBuf, b: PathBuf },
}

fn run(cmd: Command) -> Result<(), CliError> {
    let (scenario, args) = match cmd {
        Command::Compare { a, b } => {
            let diff = compare(&RunManifest::read(&a)?, &RunManifest::read(&b)?);
            let text = serde_json::to_string_pretty(&diff).map_err(|e| CliError::Io(e.to_string()))?;
            println!("{text}");
            return Ok(());
        }
        Command::Certify(a) => (Scenario::Certify, a),
        Command::Exponents(a) => (Scenario::Exponents, a),
        Command::Periodic(a) => (Scenario::Periodic, a),
        Command::Conjugacy(a) => (Scenario::Conjugacy, a),
        Command::Foliation(a) => (Scenario::Foliation, a),
        Command::Disintegrate(a) => (Scenario::Disintegrate, a),
        Command::Mk(a) => (Scenario::Mk, a),
        Command::FullSurvey(a) => (Scenario::FullSurvey, a),
    };
    let o = Overrides {
        config: args.config,
        out: args.out,
        seed: args.seed,
        workers: args.workers,
    };
    let m = run_scenario(scenario, &o)?;
    for t in &m.timings {
        eprintln!("{:<14}{:>9.3} s", t.stage, t.seconds);
    }
    eprintln!("{} outputs written", m.outputs.len() + 1);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("datorus: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
