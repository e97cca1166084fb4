use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prehistory_cli::{load_config, run, validate, CliResult, Experiment};

#[derive(Parser)]
#[command(
    name = "prehistory",
    version,
    about = "Optimal fluctuation paths and prehistory densities"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Sample forward paths and the deterministic limit.
    Simulate(Flags),
    /// Solve the optimal path by shooting.
    Nop(Flags),
    /// Scan initial momenta and report every optimal path.
    Scan(Flags),
    /// Compute the prehistory density and its peak trajectory.
    Nppd(Flags),
    /// Sample forward and backward bridge paths.
    Bridges(Flags),
    /// Sweep ε and measure bridge concentration around the optimal path.
    Lln(Flags),
    /// Run the numerical self-checks for the configured model.
    Verify(Flags),
}

#[derive(clap::Args)]
struct Flags {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(experiment: Experiment, flags: Flags) -> CliResult<()> {
    let mut file = load_config(&flags.config)?;
    if let Some(seed) = flags.seed {
        file.seed = seed;
    }
    if let Some(out) = flags.out {
        file.output_dir = out;
    }
    let config = validate(file, experiment)?;
    let manifest = run(&config)?;
    for o in &manifest.outputs {
        println!(
            "{}  {}",
            o.sha256,
            config.output_dir().join(&o.file).display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let (experiment, flags) = match Cli::parse().verb {
        Verb::Simulate(f) => (Experiment::SimulateForward, f),
        Verb::Nop(f) => (Experiment::SolveNop, f),
        Verb::Scan(f) => (Experiment::ScanAlpha0, f),
        Verb::Nppd(f) => (Experiment::ComputeNppd, f),
        Verb::Bridges(f) => (Experiment::SampleBridges, f),
        Verb::Lln(f) => (Experiment::LlnSweep, f),
        Verb::Verify(f) => (Experiment::VerifyOracles, f),
    };
    match execute(experiment, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
