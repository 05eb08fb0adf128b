//! Command-line harness: scenario files in, CSV tables and a one-line JSON
//! summary out.
//!
//! Exit codes: 0 success, 2 configuration or contract error, 3 rate
//! validation failure, 4 solver error, 5 invariant violation.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
pub mod config;
mod error;
pub mod output;

pub use error::{CliError, Result};

/// Exit status for a run whose invariant checks failed.
pub const EXIT_INVARIANT: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "renewal", version, about = "Measure solutions of the conservative renewal equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dual semigroup M_t f0 on the age grid [0, a_max]; CSV columns age,value.
    Dual {
        /// Scenario file with [rate] and optional [numerics].
        #[arg(long)]
        rate: PathBuf,
        /// Initial test function, an expression in `a`.
        #[arg(long)]
        f0: String,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward orbit of an initial measure; CSV columns t,kind,location,value.
    Evolve {
        #[arg(long)]
        rate: PathBuf,
        /// Scenario file with [[measure]] entries.
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        t: f64,
        /// Also write every snapshot at multiples of this step.
        #[arg(long)]
        snapshots: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo final ages of the age process; CSV column age.
    Oracle {
        #[arg(long)]
        rate: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n: usize,
        /// Defaults to [numerics] seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Doeblin certificate as a single-line record.
    Doeblin {
        #[arg(long)]
        rate: PathBuf,
        #[arg(long, conflicts_with = "optimize")]
        eta: Option<f64>,
        /// Maximise the decay rate over the window (default without --eta).
        #[arg(long)]
        optimize: bool,
    },
    /// Total-variation distance between two orbits against the certificate
    /// bound; CSV columns t,tv,bound.
    Converge {
        #[arg(long)]
        rate: PathBuf,
        #[arg(long)]
        mu1: PathBuf,
        #[arg(long)]
        mu2: PathBuf,
        /// Comma-separated times.
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Doeblin window; the best certificate is used when absent.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full invariant suite; CSV columns check,value,relation,limit,pass.
    Verify {
        /// Scenario file with [rate], optional [numerics] and [verify].
        #[arg(long)]
        rate: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Outcome of a command that ran to completion.
#[derive(Clone, Debug)]
pub struct Report {
    /// One-line machine-readable record.
    pub summary: serde_json::Value,
    /// False when an invariant check failed.
    pub passed: bool,
}

impl Report {
    pub fn exit_code(&self) -> u8 {
        if self.passed {
            0
        } else {
            EXIT_INVARIANT
        }
    }
}

pub fn run(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::Dual { rate, f0, t, out } => commands::dual(rate, f0, *t, out),
        Command::Evolve {
            rate,
            init,
            t,
            snapshots,
            out,
        } => commands::evolve(rate, init, *t, *snapshots, out),
        Command::Oracle {
            rate,
            init,
            t,
            n,
            seed,
            out,
        } => commands::oracle(rate, init, *t, *n, *seed, out),
        Command::Doeblin { rate, eta, .. } => commands::doeblin(rate, *eta),
        Command::Converge {
            rate,
            mu1,
            mu2,
            times,
            eta,
            out,
        } => commands::converge(rate, mu1, mu2, times, *eta, out),
        Command::Verify { rate, init, out } => commands::verify(rate, init, out.as_deref()),
    }
}
