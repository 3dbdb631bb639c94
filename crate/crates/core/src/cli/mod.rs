//! The `ksubset` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ksubset",
    version,
    about = "k-subset local differential privacy toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal subset sizes, mutual information, and error bounds.
    Analyze(AnalyzeArgs),
    /// Privatize a file of secrets into a file of views.
    Randomize(RandomizeArgs),
    /// Estimate the input distribution from a file of views.
    Estimate(EstimateArgs),
    /// Monte Carlo error of each mechanism at one (d, ε).
    Simulate(SimulateArgs),
    /// Monte Carlo error over a grid of (d, ε) rows.
    Table(TableArgs),
    /// Check closed forms against brute-force oracles.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct DomainArgs {
    /// Domain size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub d: u64,
    /// Privacy budget ε > 0.
    #[arg(long = "eps", value_parser = parse_epsilon)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Emit JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
    /// Output file; standard output when omitted or `-`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Master seed.
    #[arg(long, env = "KSUBSET_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; never changes results.
    #[arg(long, env = "KSUBSET_THREADS", value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MechanismArg {
    Kss,
    Mrr,
    Brr,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    /// Number of providers for the ℓ₂ error.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Report mutual information in bits rather than nats.
    #[arg(long)]
    pub bits: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RandomizeArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    #[arg(long, value_enum, default_value_t = MechanismArg::Kss)]
    pub mechanism: MechanismArg,
    /// Subset size for `kss`; defaults to the ℓ₂-optimal size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Secrets file, one index per line; standard input when omitted or `-`.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// View file; standard output when omitted or `-`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    #[arg(long, value_enum, default_value_t = MechanismArg::Kss)]
    pub mechanism: MechanismArg,
    /// Subset size for `kss`; defaults to the ℓ₂-optimal size for the
    /// number of views read.
    #[arg(long)]
    pub k: Option<usize>,
    /// View file; standard input when omitted or `-`.
    #[arg(long)]
    pub views: Option<PathBuf>,
    /// Fill the projected column with the simplex projection.
    #[arg(long)]
    pub project: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Providers per repetition.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Repetitions.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    /// Measure error of the raw estimate instead of its simplex projection.
    #[arg(long)]
    pub no_project: bool,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    /// Comma-separated mechanisms: BRR, MRR, KSS_MI, KSS_L2, KSS:<k>.
    #[arg(long, value_delimiter = ',', default_value = "BRR,MRR,KSS_MI,KSS_L2")]
    pub mechanisms: Vec<String>,
    /// Fixed true distribution as comma-separated probabilities; drawn
    /// uniformly from the simplex each repetition when omitted.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Comma-separated rows such as `d16e1.0`; all reference rows when omitted.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<String>>,
    /// Stop starting new rows once this many seconds have elapsed.
    #[arg(long)]
    pub budget_secs: Option<f64>,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Quick,
    Default,
    Deep,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = LevelArg::Default)]
    pub level: LevelArg,
    /// Seed for the randomized suites.
    #[arg(long, env = "KSUBSET_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Emit the report as JSON.
    #[arg(long)]
    pub json: bool,
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    let eps: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if eps.is_finite() && eps > 0.0 {
        Ok(eps)
    } else {
        Err("must be a finite number greater than 0".into())
    }
}

/// Maps a library error to an exit code.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::InvalidParams(_)
        | Error::SubsetSizeOutOfRange { .. }
        | Error::TooLarge { .. }
        | Error::InvalidMechanism(_)
        | Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match commands::dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let code = run(std::env::args_os(), &mut out, &mut std::io::stderr());
    if out.flush().is_err() && code == EXIT_OK {
        return EXIT_DATA;
    }
    code
}
