//! `hemato`: command-line front end for the simulation and verification
//! toolkit. Reads a TOML configuration, runs seeded reproducible
//! computations, and emits CSV trajectories and JSON reports.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum SimMode {
    /// Exact event-driven simulation of the finite-population process.
    Ssa,
    /// The limit process: flow between exact regime switches.
    Pdmp,
    /// Approximate Poisson-increment stepping of the finite process.
    Tau,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Suite {
    /// Invariance and absorption of the compact box.
    Box,
    /// Rank of the fields and their bracket along accessible points.
    Hormander,
    /// Distance to the limit law and fluctuation scaling over K.
    Convergence,
    /// Occupation fractions, ergodic averages and mixing proxies.
    Stationary,
    /// Weak-form residuals of the stationary transport system.
    Pde,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (falls back to HEMATO_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Run single-threaded; repeated runs are byte-identical either
    /// way, this just pins the execution order
    #[arg(long)]
    deterministic: bool,
    /// Override the output directory from the configuration
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser, Debug)]
#[command(
    name = "hemato",
    version,
    about = "Simulate and verify a hybrid stem-cell / blood-cell population model"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Equilibrium point, invariant box and divergence scan
    Equilibrium {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write replicate trajectories as CSV plus a manifest
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        mode: SimMode,
    },
    /// Run a verification suite and write a JSON verdict
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        suite: Suite,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.cmd {
        Cmd::Equilibrium { common } | Cmd::Simulate { common, .. } | Cmd::Verify { common, .. } => {
            common
        }
    };

    let mut loaded = match config::load_config(&common.config) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = &common.out {
        loaded.config.run.out_dir = out.clone();
    }
    let seed = common.seed.unwrap_or(loaded.config.run.seed);
    loaded.config.run.seed = seed;

    let threads = if common.deterministic {
        Some(1)
    } else {
        common.threads.or_else(|| {
            std::env::var("HEMATO_THREADS").ok().and_then(|s| s.parse().ok())
        })
    };
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }

    let result = match cli.cmd {
        Cmd::Equilibrium { .. } => commands::equilibrium::run(&loaded, seed),
        Cmd::Simulate { mode, .. } => commands::simulate::run(&loaded, mode, seed),
        Cmd::Verify { suite, .. } => commands::verify::run(&loaded, suite, seed),
    };

    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
