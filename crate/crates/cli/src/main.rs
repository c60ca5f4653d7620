//! `condmv`: runs simulations, fixed-point solves, Fleming-Viot and renewal
//! experiments from a JSON config and writes CSV/JSON artifacts.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "condmv",
    version,
    about = "Killed and conditioned McKean-Vlasov particle experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config (or a manifest.json from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Dot-path override applied to the config, e.g. `sim.n_particles=5000`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Killed ensemble: survival.csv, flow.csv, paths.bin.
    Simulate,
    /// Fixed-point iteration: iterations.csv, flow.csv.
    Picard,
    /// Fleming-Viot reinsertion: events.csv, f_curve.csv.
    Fv,
    /// Restart kernel and renewal solve: kernel.csv, f_volterra.csv.
    Renewal,
    /// Open-loop control against its feedback mimic: compare.csv, policy_grid.csv.
    Mimic,
    /// Policy search: trace.csv, best.json.
    Optimize,
    /// Acceptance suite: verify_report.json; exit 4 on any failure.
    Verify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Picard => "picard",
            Command::Fv => "fv",
            Command::Renewal => "renewal",
            Command::Mimic => "mimic",
            Command::Optimize => "optimize",
            Command::Verify => "verify",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = run::execute(
        cli.command,
        cli.config.as_deref(),
        &cli.out,
        cli.threads,
        &cli.overrides,
    );
    ExitCode::from(code)
}
