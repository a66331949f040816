//! `h2direct`: build, factorize, solve, verify and benchmark H²-matrix
//! systems from the command line.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure or a requested
//! tolerance not met.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ProblemArgs;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn input(msg: &str) -> Self {
        CliError::Input(msg.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<h2direct::Error> for CliError {
    fn from(e: h2direct::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "h2direct", version, about = "Direct solver for H2-matrix systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the H²-matrix and write it with its tree statistics.
    Build {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Matrix container to write.
        #[arg(long, default_value = "matrix.h2mx")]
        out: PathBuf,
        /// Also write the statistics as JSON here.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Print machine-readable JSON on stdout.
        #[arg(long)]
        json: bool,
    },
    /// Factorize a stored matrix, or one built from the problem flags.
    Factor {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Factor chain container to write.
        #[arg(long, default_value = "chain.h2fc")]
        out: PathBuf,
        /// Per-level diagnostics as JSON lines.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Solve with a stored factor chain. Vectors are in input point order.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        chain: PathBuf,
        /// Matrix the chain was computed from; rebuilt from the flags if absent.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Right-hand side (`.csv` with re,im rows, or raw f64 pairs).
        #[arg(long, conflicts_with = "random_rhs")]
        rhs: Option<PathBuf>,
        /// Seeded random right-hand side (the default, with --seed).
        #[arg(long)]
        random_rhs: Option<u64>,
        /// Solution file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail with exit code 3 if the relative residual exceeds this.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Compare against a dense solve (small problems only).
    Verify {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Bound on the relative distance to the dense solution.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Scaling sweep over fixture sizes.
    Bench {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Comma-separated sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Timing batches per solve measurement.
        #[arg(long, default_value_t = 3)]
        batches: usize,
        /// Metrics table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Metrics as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Build {
            problem,
            out,
            stats,
            json,
        } => commands::build(&problem, &out, stats.as_deref(), json),
        Cmd::Factor {
            problem,
            matrix,
            out,
            diagnostics,
            json,
        } => commands::factor(&problem, matrix.as_deref(), &out, diagnostics.as_deref(), json),
        Cmd::Solve {
            problem,
            chain,
            matrix,
            rhs,
            random_rhs,
            out,
            tol,
            json,
        } => commands::solve(
            &problem,
            &commands::SolveArgs {
                chain,
                matrix,
                rhs,
                random_rhs,
                out,
                tol,
                json,
            },
        ),
        Cmd::Verify { problem, tol, json } => commands::verify(&problem, tol, json),
        Cmd::Bench {
            problem,
            sizes,
            batches,
            csv,
            out,
            json,
        } => commands::bench(&problem, sizes, batches, csv.as_deref(), out.as_deref(), json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("h2direct: {e}");
            ExitCode::from(e.code())
        }
    }
}
