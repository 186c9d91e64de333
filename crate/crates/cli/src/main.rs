use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;

#[derive(Debug, Parser)]
#[command(name = "pgmca", version, about = "Poisson GMCA source separation for multichannel count images")]
struct Cli {
    /// Print progress and summaries to standard error.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a multichannel Poisson observation with known ground truth.
    Simulate(SimulateArgs),
    /// Separate the sources of an observation file.
    Run(RunArgs),
    /// Run a Monte-Carlo flux sweep comparing the methods.
    Sweep(SweepArgs),
    /// Print the header and summary statistics of a matrix file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gmca,
    Pgmca,
    BetaNmf,
}

impl MethodArg {
    pub fn name(self) -> &'static str {
        match self {
            MethodArg::Gmca => "gmca",
            MethodArg::Pgmca => "pgmca",
            MethodArg::BetaNmf => "beta-nmf",
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Observation matrix (PMAT1).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// JSON settings of the chosen method.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sources to estimate.
    #[arg(long, default_value_t = 3)]
    pub sources: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// True mixing matrix; adds the SAD to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the sweep cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// True mixing matrix to compare an estimate against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => commands::simulate_cmd(args, cli.verbose),
        Command::Run(args) => commands::run_cmd(args, cli.verbose),
        Command::Sweep(args) => commands::sweep_cmd(args, cli.verbose),
        Command::Inspect(args) => commands::inspect_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pgmca: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
