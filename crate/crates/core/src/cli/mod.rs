//! Config-driven experiment runner: `run <config>`, `validate <config>`,
//! `list-catalog`. Exit codes: 0 pass, 1 check failure, 2 config error.

pub mod config;
pub mod run;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{Experiment, ExperimentConfig};
pub use run::{emit, execute, Outcome, Table};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config error in `{key}`: {msg}")]
    Key { key: String, msg: String },
    #[error("io error at {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("run failed: {0}")]
    Lab(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Key { .. } => 2,
            CliError::Io { .. } | CliError::Lab(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hyplab", version, about = "Hyperbolic loss-of-derivatives laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Print the shipped moduli, weights, sequences and coefficient families.
    ListCatalog,
}

/// Rayon pool honouring HYPLAB_THREADS (unset or 0: rayon's default).
pub fn thread_pool() -> rayon::ThreadPool {
    let n = std::env::var("HYPLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool")
}

/// Runs a config and writes its outputs; returns the outcome.
pub fn run_config(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let outcome = thread_pool().install(|| execute(cfg))?;
    emit(cfg, &outcome, out)?;
    Ok(outcome)
}

pub fn run_experiment(config_path: &Path, out: Option<&Path>) -> i32 {
    let cfg = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    match run_config(&cfg, &dir) {
        Ok(o) => {
            println!(
                "{:?}: {} ({}), outputs in {}",
                o.experiment,
                if o.pass { "PASS" } else { "FAIL" },
                o.summary,
                dir.display()
            );
            if o.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn validate_config(config_path: &Path) -> i32 {
    match ExperimentConfig::load(config_path).and_then(|c| c.resolve().map(|_| c)) {
        Ok(c) => {
            println!("{}: ok ({:?})", config_path.display(), c.experiment);
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn catalog_listing() -> String {
    use crate::moduli::ModulusOfContinuity;
    use crate::weights::{WeightFunction, WeightSequence};
    let mut s = String::from("moduli (mu):\n");
    for m in ModulusOfContinuity::catalog() {
        s += &format!("  {:<24} {}\n", m.id(), m.classify());
    }
    s += "weight functions (eta):\n";
    for w in WeightFunction::catalog() {
        s += &format!("  {}\n", w.id());
    }
    s += "weight sequences (K):\n";
    for k in WeightSequence::catalog() {
        s += &format!("  {}\n", k.id());
    }
    s += "coefficient families:\n";
    for f in [
        "coeff:constant:c=<c>",
        "coeff:smooth:c0=<c0>,c1=<c1>,nu=<nu>",
        "coeff:sawtooth:mu=<modulus>,c0=<c0>,c=<c>,h=<h>",
        "coeff:resonant:mu=<modulus>,c=<c>",
    ] {
        s += &format!("  {f}\n");
    }
    s
}

pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, out } => run_experiment(&config, out.as_deref()),
        Command::Validate { config } => validate_config(&config),
        Command::ListCatalog => {
            print!("{}", catalog_listing());
            0
        }
    }
}
