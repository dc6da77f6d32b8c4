use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Exact and compressed common-information planning for finite-horizon
/// Dec-POMDPs.
#[derive(Debug, Parser)]
#[command(name = "ciplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Model document (JSON).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,

    /// Compression document; give once for the private side and once more
    /// for the common side.
    #[arg(long = "compression", global = true)]
    pub compressions: Vec<PathBuf>,

    /// Reference measure for common compressions.
    #[arg(long, value_enum, default_value_t = Mu::Uniform, global = true)]
    pub mu: Mu,

    /// Cap on (common state × prescription) evaluations.
    #[arg(long, default_value_t = ciplan_core::DEFAULT_BUDGET, value_parser = clap::value_parser!(u64).range(1..), global = true)]
    pub budget: u64,

    /// Reward tolerance for greedy compression.
    #[arg(long = "tol-r", default_value_t = 0.05, global = true)]
    pub tol_r: f64,

    /// Observation tolerance for greedy compression.
    #[arg(long = "tol-o", default_value_t = 0.05, global = true)]
    pub tol_o: f64,

    /// Directory for report files.
    #[arg(long, default_value = "ciplan-out", global = true)]
    pub out: PathBuf,

    /// What to print on stdout.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mu {
    Uniform,
}

impl Mu {
    pub fn as_str(self) -> &'static str {
        match self {
            Mu::Uniform => ciplan_core::approx_dp::MU_UNIFORM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Greedy,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check model invariants.
    Validate,
    /// Run one of the dynamic programs.
    Solve {
        /// 1: full common states; 2: private compression; 3: private and
        /// common compression; 4: beliefs; 5: beliefs over private labels.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        alg: u8,
    },
    /// Build a private compression and its label-belief common compression.
    Compress {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Measure the error parameters of the given compressions.
    Measure,
    /// Compare observed value gaps against their bounds.
    VerifyGap,
    /// Optimal value by exhaustive policy enumeration.
    Oracle,
    /// Sufficiency conditions, recursion, lemma and proposition checks.
    CheckConditions,
}

/// Exit statuses.
const OK: u8 = 0;
const VERIFICATION_FAILED: u8 = 1;
const INPUT_ERROR: u8 = 2;
const BUDGET_EXHAUSTED: u8 = 3;

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("CIPLAN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("CIPLAN_THREADS: `{raw}` is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("CIPLAN_THREADS: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(INPUT_ERROR);
    }
    let args = &cli.common;
    let result = match cli.command {
        Command::Validate => commands::validate(args),
        Command::Solve { alg } => commands::solve(args, alg),
        Command::Compress { mode } => commands::compress(args, mode),
        Command::Measure => commands::measure(args),
        Command::VerifyGap => commands::verify_gap(args),
        Command::Oracle => commands::oracle(args),
        Command::CheckConditions => commands::check_conditions(args),
    };
    let outcome = match result {
        Ok(outcome) => outcome,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_budget() { BUDGET_EXHAUSTED } else { INPUT_ERROR });
        }
    };
    if let Err(e) = outcome.write(&args.out) {
        eprintln!("error: writing reports to {}: {e}", args.out.display());
        return ExitCode::from(INPUT_ERROR);
    }
    match args.format {
        Format::Table => print!("{}", outcome.table()),
        Format::Structured => print!("{}", outcome.structured()),
    }
    ExitCode::from(match outcome.status {
        commands::Status::Ok => OK,
        commands::Status::Failed => VERIFICATION_FAILED,
        commands::Status::Budget => BUDGET_EXHAUSTED,
    })
}
