//! Experiment driver: each workflow is a subcommand reading a TOML
//! configuration and writing CSVs under `<out_dir>/<command>/<hash12>/`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod setup;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::Fault;
use config::{Config, PrecisionName};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "metagrad", version, about = "Metagradient experiments on toy tasks")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Checkpoint tree arity.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionName>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[arg(long, global = true, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Replay vs stepwise metagradients, finite differences and tree bounds.
    MetagradCheck,
    /// Metasmoothness of a grid of model configurations.
    SmoothnessScan,
    /// Data selection by metagradient descent on sample counts.
    SelectData,
    /// Data poisoning by projected metagradient ascent.
    Poison,
    /// Learning-rate schedule search.
    LrOpt,
    /// Checkpoint-tree accounting sweep.
    BenchReplay,
}

impl Cli {
    pub fn resolve(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(path) => Config::from_toml(&fs::read_to_string(path)?)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<Option<PathBuf>, CliError> {
        let cfg = self.resolve()?;
        if self.print_config {
            print!("{}", cfg.to_toml());
            return Ok(None);
        }
        let dir = match self.command {
            Command::MetagradCheck => commands::check::run(&cfg, self.inject_fault)?,
            Command::SmoothnessScan => commands::scan::run(&cfg)?,
            Command::SelectData => commands::select::run(&cfg)?,
            Command::Poison => commands::poison::run(&cfg)?,
            Command::LrOpt => commands::lr::run(&cfg)?,
            Command::BenchReplay => commands::bench::run(&cfg)?,
        };
        Ok(Some(dir))
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.execute() {
        Ok(Some(dir)) => {
            println!("{}", dir.display());
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
