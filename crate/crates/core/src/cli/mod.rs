//! Command-line front end.

mod commands;
pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::Config;

use crate::format::write_atomic;

/// Exit status for success, failed checks, and bad input.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "netswitch", version, about = "Offline policy switching for finite MDPs")]
pub struct Cli {
    /// Configuration file (`key = value`, `[section]` headers).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for every random draw.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Directory receiving output files.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Do not print reports to stdout.
    #[arg(long, global = true)]
    pub quiet: bool,

    /// Override a configuration entry, e.g. `--set cost.c_l=5`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Values, Q-values, cost and net tables of a policy.
    Evaluate,
    /// Switching cost between the old policy and a candidate.
    Cost,
    /// Roll out a behaviour policy and write a transition dataset.
    GenData,
    /// Offline net value estimate of a candidate.
    Ope,
    /// Rank a finite candidate set by net value.
    Search,
    /// Run the net actor-critic and decide whether to switch.
    Nac,
    /// Run the bundled golden checks.
    #[command(name = "verify-paper")]
    Verify {
        /// Print check names without running them.
        #[arg(long)]
        list: bool,
        /// Replace the bundled two-state MDP with this file.
        #[arg(long, value_name = "PATH")]
        fixture: Option<PathBuf>,
    },
}

/// Where reports go.
pub(crate) struct Output {
    dir: Option<PathBuf>,
    quiet: bool,
}

impl Output {
    pub(crate) fn emit(&self, name: &str, contents: &str) -> crate::error::Result<()> {
        if let Some(dir) = &self.dir {
            write_atomic(&dir.join(name), contents)?;
        }
        if !self.quiet {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
        }
        Ok(())
    }

    /// Writes a file only when an output directory is set.
    pub(crate) fn file(&self, name: &str, contents: &str) -> crate::error::Result<()> {
        match &self.dir {
            Some(dir) => write_atomic(&dir.join(name), contents),
            None => Ok(()),
        }
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn load_config(cli: &Cli) -> crate::error::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.insert("", "seed", &seed.to_string());
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> crate::error::Result<i32> {
    let out = Output {
        dir: cli.out.clone(),
        quiet: cli.quiet,
    };
    let cfg = || load_config(cli);
    match &cli.command {
        Command::Evaluate => commands::cmd_evaluate(&cfg()?, &out),
        Command::Cost => commands::cmd_cost(&cfg()?, &out),
        Command::GenData => commands::cmd_gen_data(&cfg()?, &out),
        Command::Ope => commands::cmd_ope(&cfg()?, &out),
        Command::Search => commands::cmd_search(&cfg()?, &out),
        Command::Nac => commands::cmd_nac(&cfg()?, &out),
        Command::Verify { list, fixture } => verify::cmd_verify(*list, fixture.as_deref(), &out),
    }
}
