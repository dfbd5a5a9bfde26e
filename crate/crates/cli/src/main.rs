use anyhow::Result;
use bilheat_cli::{run, ExperimentConfig, Kind};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "bilheat",
    version,
    about = "Simulate and steer the bilinear heat equation on the torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config; sections not given take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Seed of the randomized entry-ball sweep (overrides seed).
    #[arg(long)]
    seed: Option<u64>,

    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve a state under a constant control.
    Simulate(Common),
    /// Approximate steering through saturation controls.
    ApproxSteer(Common),
    /// Stacked exact steering to the ground state.
    ExactSteer(Common),
    /// Null the linearization by a moment problem.
    MomentSolve(Common),
    /// Conjugated dynamics against its small-δ limit.
    LimitExperiment(Common),
    /// Density criterion for a generator set.
    DensityCheck(Common),
    /// Explicit constants of the local exact result.
    Constants(Common),
    /// Coefficients of the potential pair against their closed forms.
    AuditPotentials(Common),
}

impl Command {
    fn split(self) -> (Kind, Common) {
        match self {
            Command::Simulate(c) => (Kind::Simulate, c),
            Command::ApproxSteer(c) => (Kind::ApproxSteer, c),
            Command::ExactSteer(c) => (Kind::ExactSteer, c),
            Command::MomentSolve(c) => (Kind::MomentSolve, c),
            Command::LimitExperiment(c) => (Kind::LimitExperiment, c),
            Command::DensityCheck(c) => (Kind::DensityCheck, c),
            Command::Constants(c) => (Kind::Constants, c),
            Command::AuditPotentials(c) => (Kind::AuditPotentials, c),
        }
    }
}

fn main() -> Result<()> {
    let (kind, common) = Cli::parse().command.split();
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = common.out {
        cfg.output.dir = out;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.print_config {
        cfg.kind = Some(kind);
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let done = run(kind, &cfg)?;
    println!("[{}] artifacts in {}", done.kind.name(), done.out.display());
    Ok(())
}
