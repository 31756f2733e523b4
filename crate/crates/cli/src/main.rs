//! `expwd`: translate schedules, run and compare trajectories, audit norm
//! dynamics, simulate the toy model and check architectures for scale
//! invariance.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 infeasible
//! schedule, 3 verification failure (the report is still written).

mod commands;
mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "expwd", version, about = "Weight decay versus exponential learning-rate schedules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Translate a step-decay, cosine, constant or explicit schedule.
    Translate(Common),
    /// Run the weight-decay and/or exponential-LR trajectory.
    Run(Common),
    /// Run both trajectories and check that they agree in function space.
    Verify(Common),
    /// Check norm identities and the equilibrium ratio on a recorded run.
    Dynamics(Common),
    /// Toy-model regimes, escape experiment and chi-square tail check.
    Toy(Common),
    /// Decide whether a module graph is scale invariant.
    GraphCheck(Common),
    /// Randomized state-algebra lemma harness.
    Lemmas(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the trial count in the configuration.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Print nothing on success.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Translate(c) => commands::translate_schedule(c),
        Command::Run(c) => commands::run(c),
        Command::Verify(c) => commands::verify(c),
        Command::Dynamics(c) => commands::dynamics(c),
        Command::Toy(c) => commands::toy(c),
        Command::GraphCheck(c) => commands::graph_check(c),
        Command::Lemmas(c) => commands::lemmas(c),
    };
    match result {
        Ok(summary) => {
            if !quiet(&cli.command) {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn quiet(cmd: &Command) -> bool {
    match cmd {
        Command::Translate(c)
        | Command::Run(c)
        | Command::Verify(c)
        | Command::Dynamics(c)
        | Command::Toy(c)
        | Command::GraphCheck(c)
        | Command::Lemmas(c) => c.quiet,
    }
}
