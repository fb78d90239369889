//! Command-line pipeline: generate → score → analyze → report.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{cmd_analyze, cmd_generate, cmd_report, cmd_score};
pub use config::{BonferroniM, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("credential error: {0}")]
    Credential(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("strict mode: {0}")]
    Strict(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Credential(_) => 3,
            CliError::MissingInput(_) => 4,
            CliError::Strict(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ideolens",
    version,
    about = "Score gendered vs. gender-neutral variant choices under metalinguistic prompts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate the prompt suite and write its manifest.
    Generate(CommonArgs),
    /// Score the manifest with the configured backend.
    Score(CommonArgs),
    /// Run the statistical analyses on results files.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Results files to analyse (repeatable); defaults to the run's own.
        #[arg(long = "results")]
        results: Vec<PathBuf>,
    },
    /// Render tables and figures from the analyses.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// role-nouns or pronouns
    #[arg(long)]
    pub domain: Option<String>,
    /// 1 or 2
    #[arg(long)]
    pub experiment: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Abort scoring on the first failed item.
    #[arg(long)]
    pub strict: bool,
}

impl CommonArgs {
    pub fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(
            &self.config,
            &Overrides {
                domain: self.domain.clone(),
                experiment: self.experiment,
                seed: self.seed,
                concurrency: self.concurrency,
                out: self.out.clone(),
            },
        )
    }
}

/// Run one command; the error carries the exit status.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.load()?;
            let summary = cmd_generate(&cfg)?;
            println!("{summary}");
        }
        Command::Score(args) => {
            let cfg = args.load()?;
            let summary = cmd_score(&cfg, args.strict)?;
            println!("{summary}");
        }
        Command::Analyze { common, results } => {
            let cfg = common.load()?;
            let summary = cmd_analyze(&cfg, &results)?;
            println!("{summary}");
        }
        Command::Report(args) => {
            let cfg = args.load()?;
            for path in cmd_report(&cfg)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
