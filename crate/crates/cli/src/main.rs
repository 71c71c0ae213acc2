//! Pipeline command line: ingest sessions, derive masked trajectories,
//! decompose at context boundaries, build tries, plan and encode packs,
//! verify gradient equivalence, shape advantages, and report statistics.
//!
//! Exit codes: 0 ok, 1 usage, 2 input, 3 infeasible budget, 4 verification
//! failure. All outputs are deterministic given identical inputs and flags;
//! files are written atomically (temp file + rename).

mod ops;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use triepack::planner::PlanError;
use triepack::trajectory::ParseError;
use triepack::trie::TrieError;
use triepack::verifier::VerifierError;

#[derive(Parser)]
#[command(
    name = "triepack",
    version,
    about = "Trajectory packing and training-signal toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command that reads session files.
#[derive(Args, Clone)]
struct SessionArgs {
    /// Session file (JSONL, one session per line).
    #[arg(long)]
    input: PathBuf,
    /// Accept unknown fields in the input instead of rejecting them.
    #[arg(long)]
    lenient: bool,
    /// Keep loss on system/user/tool tokens instead of masking them.
    #[arg(long)]
    keep_non_assistant: bool,
    /// Also mask assistant messages that follow an erroneous tool call.
    #[arg(long)]
    no_preserve_recovery: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Emit one error-masked trajectory per leaf of every session.
    Mask {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Split sessions into subtrees at compression/mode-switch boundaries.
    Decompose {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Plan and encode budget-feasible packs over the decomposed corpus.
    Pack {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        output: PathBuf,
        /// Token budget per pack.
        #[arg(long)]
        budget: usize,
        /// Bundle count handled exactly by the merge DP.
        #[arg(long, default_value_t = 12)]
        dp_width: usize,
        /// Loss normalization: trajectory_mean or token_mean.
        #[arg(long, default_value = "trajectory_mean")]
        normalization: String,
    },
    /// Check packed loss and gradients against the unpacked computation.
    Verify {
        #[command(flatten)]
        session: SessionArgs,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Vocabulary size; max token id + 1 when omitted.
        #[arg(long = "V", value_name = "V")]
        vocab: Option<usize>,
        /// Hidden width of the micro model (even).
        #[arg(long = "d", value_name = "D", default_value_t = 4)]
        hidden: usize,
        /// Token budget; whole-trie size when omitted.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 12)]
        dp_width: usize,
        #[arg(long, default_value = "trajectory_mean")]
        normalization: String,
        /// Gradient baseline: analytic or numeric.
        #[arg(long, default_value = "analytic")]
        mode: String,
        /// Relative tolerance on packed-vs-unpacked loss.
        #[arg(long, default_value_t = 1e-10)]
        loss_tol: f64,
        /// Relative tolerance on gradients; 1e-6 analytic / 1e-4 numeric when omitted.
        #[arg(long)]
        grad_tol: Option<f64>,
    },
    /// Shape GRPO-style advantages with difficulty and entropy rescaling.
    Advantage {
        /// Group file (JSONL, one group per line).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Default difficulty scaling for groups that omit `lambda`.
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Default entropy scaling for groups that omit `mu`.
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        /// Deviation threshold for resampling decisions.
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        lenient: bool,
    },
    /// Corpus statistics: sharing ratio, mask coverage, subtree counts.
    Stats {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        output: PathBuf,
        /// Re-serialize the parsed sessions to this path (round-trip surface).
        #[arg(long)]
        echo: Option<PathBuf>,
    },
}

/// Failure categories with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Infeasible(String),
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Input(m)
            | CliError::Infeasible(m)
            | CliError::Verification(m) => m,
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrieError> for CliError {
    fn from(e: TrieError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::InfeasibleTrajectory { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<VerifierError> for CliError {
    fn from(e: VerifierError) -> Self {
        match e {
            VerifierError::SizeGuard(_)
            | VerifierError::OddHiddenWidth(_)
            | VerifierError::VocabTooSmall(_) => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Mask { session, output } => ops::mask(&session, &output),
        Command::Decompose { session, output } => ops::decompose(&session, &output),
        Command::Pack {
            session,
            output,
            budget,
            dp_width,
            normalization,
        } => ops::pack(&session, &output, budget, dp_width, &normalization),
        Command::Verify {
            session,
            output,
            seed,
            vocab,
            hidden,
            budget,
            dp_width,
            normalization,
            mode,
            loss_tol,
            grad_tol,
        } => ops::verify(ops::VerifyArgs {
            session: &session,
            output: output.as_deref(),
            seed,
            vocab,
            hidden,
            budget,
            dp_width,
            normalization: &normalization,
            mode: &mode,
            loss_tol,
            grad_tol,
        }),
        Command::Advantage {
            input,
            output,
            lambda,
            mu,
            tau,
            lenient,
        } => ops::advantage(&input, &output, lambda, mu, tau, lenient),
        Command::Stats {
            session,
            output,
            echo,
        } => ops::stats(&session, &output, echo.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
