use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slfv_core::harness::{run_experiment_with_workers, ExperimentConfig};

#[derive(Parser)]
#[command(name = "slfv", version, about = "Monte Carlo experiments for the spatial Lambda-Fleming-Viot process")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Non-coalescence probability of the dual pair over a grid of times.
    GammaE(Common),
    /// First-moment duality between the forward field and the single dual.
    DualityFirst(Common),
    /// Second-moment duality with the two-particle dual.
    DualitySecond(Common),
    /// Conservation of the mean total mass.
    Mass(Common),
    /// Gap between the martingale bracket and its limit.
    SqfnGap(Common),
    /// Optional stopping identities and hitting-probability bounds.
    Hitting(Common),
    /// Reflection coupling diagnostics.
    Coupling(Common),
    /// Large-radius behaviour of the killed exit functional.
    PhiLimit(Common),
    /// Moments of the rescaled field against super-Brownian motion.
    SbmCompare(Common),
    /// Dumps the forward field at chosen times.
    ForwardSnapshot(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Output directory for results.csv and meta.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Command {
    fn split(self) -> (&'static str, Common) {
        match self {
            Command::GammaE(c) => ("gamma-e", c),
            Command::DualityFirst(c) => ("duality-first", c),
            Command::DualitySecond(c) => ("duality-second", c),
            Command::Mass(c) => ("mass", c),
            Command::SqfnGap(c) => ("sqfn-gap", c),
            Command::Hitting(c) => ("hitting", c),
            Command::Coupling(c) => ("coupling", c),
            Command::PhiLimit(c) => ("phi-limit", c),
            Command::SbmCompare(c) => ("sbm-compare", c),
            Command::ForwardSnapshot(c) => ("forward-snapshot", c),
        }
    }
}

fn main() -> ExitCode {
    let (name, args) = Cli::parse().command.split();
    let mut config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if config.experiment != name {
        eprintln!(
            "error: configuration is for `{}` but the `{name}` subcommand was used",
            config.experiment
        );
        return ExitCode::from(2);
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(r) = args.replicas {
        config.replicas = r;
    }
    if args.out.is_some() {
        config.out = args.out;
    }
    let workers = args.workers.unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    });
    match run_experiment_with_workers(&config, workers) {
        Ok(bundle) => {
            print!("{}", bundle.csv());
            for c in &bundle.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if bundle.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
