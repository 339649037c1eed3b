mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use invrank::evalharness::Strategy;
use invrank::sygus::Source;

/// Loop-invariant verification and candidate reranking pipeline.
#[derive(Debug, Parser)]
#[command(name = "invrank", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-problem work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// SMT solver binary.
    #[arg(long, global = true)]
    pub solver: Option<PathBuf>,
    /// Embedding provider.
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderArg>,
    /// Comma-separated cutoffs for V@K.
    #[arg(long = "k", global = true, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Record embed/rank/verify wall-clock times in reports.
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Remote,
    Local,
    Tfidf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate the problems and candidates.
    Parse,
    /// Verify every candidate and write the labeled dataset.
    Verify,
    /// Remove semantically equivalent candidates and report the counts.
    Dedup,
    /// Embed all problems and candidates into the cache.
    Embed,
    /// Train one model per fold.
    Train,
    /// Rank candidates with the model that held out each problem's fold.
    Rank {
        /// Only this problem.
        #[arg(long)]
        problem: Option<String>,
    },
    /// Compare ordering strategies and write reports.
    Eval {
        /// Strategies to run; all five by default.
        #[arg(long, value_delimiter = ',')]
        strategy: Option<Vec<Strategy>>,
    },
    /// Sample candidates from a chat model until one verifies.
    Generate {
        #[arg(long)]
        problem: Option<String>,
        /// Source tag for the written candidate files.
        #[arg(long, default_value = "llm_gpt35")]
        source: Source,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => code.into(),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_FAILURE)
        }
    }
}
