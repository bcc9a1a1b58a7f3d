//! Experiment runner: config parsing, seeded execution and result files.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

use config::{CommandKind, ExperimentConfig, Resolved, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(#[from] saa_amis::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("check failed: {0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Runtime(_) | Self::Io(_) => EXIT_RUNTIME,
            Self::Acceptance(_) => EXIT_ACCEPTANCE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "amis-lab", version, about = "Sample average approximation with adaptive multiple importance sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one chain, write the f_n profile, the sample history and ϑ_n.
    Estimate(CommandArgs),
    /// Compare concentration bounds with Monte Carlo exceedance frequencies.
    Tailbound(CommandArgs),
    /// Replicate √n(ϑ_n − ϑ) and test it against its limiting normal law.
    Clt(CommandArgs),
    /// Record empirical paths of the limit-theorem conditions.
    Conditions(CommandArgs),
    /// Check a problem's closed-form objective against quadrature.
    VerifyProblem(CommandArgs),
}

#[derive(Debug, Args)]
struct CommandArgs {
    /// Flat JSON config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Config overrides, e.g. --n=1000 --epsilon=0.1,0.2 (take precedence).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(kind: CommandKind, args: &CommandArgs) -> Result<commands::Outcome, CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let config = ExperimentConfig::assemble(args.config.as_deref(), env_seed.as_deref(), &args.overrides)?;
    let threads = config.threads;
    let resolved = Resolved::new(config, kind)?;
    std::fs::create_dir_all(&resolved.output_dir)?;
    let run = || match kind {
        CommandKind::Estimate => commands::estimate(&resolved),
        CommandKind::Tailbound => commands::tailbound(&resolved),
        CommandKind::Clt => commands::clt(&resolved),
        CommandKind::Conditions => commands::conditions(&resolved),
        CommandKind::VerifyProblem => commands::verify_problem(&resolved),
    };
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {t} worker threads: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (kind, args) = match &cli.command {
        Command::Estimate(a) => (CommandKind::Estimate, a),
        Command::Tailbound(a) => (CommandKind::Tailbound, a),
        Command::Clt(a) => (CommandKind::Clt, a),
        Command::Conditions(a) => (CommandKind::Conditions, a),
        Command::VerifyProblem(a) => (CommandKind::VerifyProblem, a),
    };
    match execute(kind, args) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            for f in &outcome.files {
                println!("wrote {f}");
            }
            if outcome.passed {
                EXIT_OK
            } else {
                let e = CliError::Acceptance(outcome.message);
                eprintln!("{e}");
                e.exit_code()
            }
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
