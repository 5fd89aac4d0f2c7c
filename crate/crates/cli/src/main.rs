//! `hmpo`: command line driver for matrix product operator dynamics.

mod config;
mod run;
mod tools;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use config::PartialConfig;
use tools::Suite;

/// Thread count for the parallel sections; unset means one per core.
const THREADS_VAR: &str = "HMPO_THREADS";

#[derive(Parser)]
#[command(name = "hmpo", version, about = "Heisenberg-picture MPO dynamics with particle-number symmetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one observable and write `t,re,im,accumulated_cutoff,max_osee,chi_max_used`.
    Simulate {
        /// TOML file with the same keys as the flags; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        settings: PartialConfig,
    },
    /// Entanglement of the fixed-particle-number projector across one bond.
    ProjectorOsee {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        length: usize,
        /// Inclusive range `a:b` of particle numbers.
        #[arg(long)]
        n_range: String,
        /// Defaults to the chain centre.
        #[arg(long)]
        bond: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare the tensor network against exact dense evolution.
    OracleCheck {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 6)]
        length: usize,
        #[arg(long, default_value_t = 0.8)]
        delta: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Run several configs that differ only in method or truncation and align their outputs.
    Compare {
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        /// Joint CSV; printed to stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit the decay ansatz to the real part of a simulate CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Time window `lo:hi`.
        #[arg(long)]
        window: String,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.trim().parse().with_context(|| format!("{THREADS_VAR} must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, resume, settings } => {
            let cfg = settings.resolve(config.as_deref())?;
            let outcome = run::simulate(&cfg, resume.as_deref())?;
            eprintln!(
                "terminated by {} at t = {} after {} steps (accumulated cutoff {:.3e})",
                run::termination_label(outcome.termination),
                outcome.final_time(),
                outcome.steps,
                outcome.accumulated_cutoff
            );
        }
        Command::ProjectorOsee { d, length, n_range, bond, output } => {
            tools::projector_osee_cmd(d, length, &n_range, bond, output.as_deref())?;
        }
        Command::OracleCheck { suite, length, delta, tolerance } => {
            tools::oracle_check_cmd(suite, length, delta, tolerance)?;
        }
        Command::Compare { configs, output } => {
            tools::compare_cmd(&configs, output.as_deref())?;
        }
        Command::Fit { input, window } => {
            tools::fit_cmd(&input, &window)?;
        }
    }
    Ok(())
}
