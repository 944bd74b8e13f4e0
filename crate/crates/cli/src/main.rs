//! `conewave` command-line driver.
//!
//! Every subcommand reads a key/value config (see [`config`]), validates all of
//! it before computing, writes CSV/JSON outputs plus `manifest.json` to the
//! output directory and exits with 0 (pass), 1 (validation or I/O error) or
//! 2 (numerical failure or failed built-in check).
//!
//! The output directory is `--out`, else `$CONEWAVE_OUT`, else the config's
//! `out` key, else `./out`.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Validation { field: String, message: String },
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        CliError::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation { field, message } => write!(f, "invalid config: {field}: {message}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<conewave::Error> for CliError {
    fn from(e: conewave::Error) -> Self {
        use conewave::Error as E;
        match &e {
            E::Io { .. } => CliError::Io(e.to_string()),
            E::InvalidParameter(_)
            | E::Misaligned { .. }
            | E::Precondition(_)
            | E::WindowExhausted { .. }
            | E::SizeMismatch { .. }
            | E::InvalidAxisPair(..)
            | E::Malformed { .. }
            | E::MissingSection { .. }
            | E::Version(_)
            | E::Json(_) => CliError::validation("input", e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "conewave", version, about = "Forward runs, inversions and audits for the point-source wave problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    LayerStrip,
    Linearized,
    Kirchhoff,
}

#[derive(Subcommand)]
enum Command {
    /// Run the forward model and save the cylinder trace.
    Forward {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct the potential from a trace file.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Energy and identity report for a saved field, or for the built-in smooth field.
    EnergyAudit {
        #[command(flatten)]
        common: Common,
        /// Directory written by `forward` with `save_field = true`.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Q_gamma ratios of a potential.
    Qgamma {
        #[command(flatten)]
        common: Common,
        /// Potential JSON; defaults to the config's potential.
        #[arg(long)]
        potential: Option<PathBuf>,
    },
    /// Run the configured experiment at h, h/2, h/4 and report observed orders.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("CONEWAVE_OUT").map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| Path::new("out").to_path_buf())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (common, name) = match &cli.command {
        Command::Forward { common } => (common, "forward"),
        Command::Invert { common, .. } => (common, "invert"),
        Command::EnergyAudit { common, .. } => (common, "energy-audit"),
        Command::Qgamma { common, .. } => (common, "qgamma"),
        Command::Convergence { common } => (common, "convergence"),
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = out_dir(common.out.clone(), &cfg);
    match cli.command {
        Command::Forward { .. } => commands::forward(&cfg, &out),
        Command::Invert { trace, method, .. } => commands::invert(&cfg, &out, &trace, method),
        Command::EnergyAudit { field, .. } => commands::energy_audit(&cfg, &out, field.as_deref()),
        Command::Qgamma { potential, .. } => commands::qgamma(&cfg, &out, potential.as_deref()),
        Command::Convergence { .. } => commands::convergence(&cfg, &out),
    }
    .inspect_err(|_| eprintln!("{name} failed"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("built-in checks failed; see manifest.json");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
