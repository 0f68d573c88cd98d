//! `psbounds`: strata estimates, bounds, bootstrap, diagnostics and
//! simulation sweeps from the command line.

mod commands;
mod config;
mod output;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psbounds::diagnostics::DiagnosticKind;

use config::Format;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input data.
    Input(String),
    /// Bad configuration file, flag combination or scenario.
    Config(String),
    /// Data that violate an estimator's preconditions.
    Precondition(String),
    Other(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Precondition(m) => write!(f, "precondition failed: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Input(_) => 3,
            CliError::Config(_) => 4,
            CliError::Precondition(_) => 5,
        }
    }
}

impl From<psbounds::Error> for CliError {
    fn from(e: psbounds::Error) -> Self {
        use psbounds::Error::*;
        let m = e.to_string();
        match e {
            NoRecords | InvalidRecord { .. } | MissingColumn(_) | Io(_) | Parse(_) => CliError::Input(m),
            UnknownCovariate(_) | InvalidPlan(_) | InvalidScenario(_) => CliError::Config(m),
            EmptyArm(_) | EmptyGroup(_) | Undefined(_) | NoCompliers | InvalidInput(_) | SliceFailed { .. }
            | TooManyFailures { .. } => CliError::Precondition(m),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "psbounds", version, about = "Principal-strata estimates and covariate-tightened bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// CSV with columns unit_id, z, s, y, prob_treat and covariates.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Analysis config (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving one CSV per table.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SliceArgs {
    /// Covariate to slice on.
    #[arg(long)]
    pub covariate: Option<String>,
    /// Number of quantile slices.
    #[arg(long)]
    pub slices: Option<usize>,
    /// Covariate splitting each slice further.
    #[arg(long)]
    pub secondary_covariate: Option<String>,
    /// Number of secondary slices per primary slice.
    #[arg(long)]
    pub secondary_slices: Option<usize>,
    /// Covariate ordering records tied on the slicing covariate.
    #[arg(long)]
    pub tie_breaker: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Group summaries and point-identified strata quantities.
    Estimate {
        #[command(flatten)]
        common: Common,
    },
    /// Complier bounds, unsliced and optionally sliced on a covariate.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        slice: SliceArgs,
    },
    /// Bootstrap-adjusted complier ITT bounds.
    Bootstrap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        slice: SliceArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// McFadden R² of covariates under the principal, compliance and prognostic recipes.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Covariate to assess; repeatable. Defaults to all covariates.
        #[arg(long = "covariate")]
        covariates: Vec<String>,
        /// Diagnostic recipe; repeatable. Defaults to all three.
        #[arg(long = "kind")]
        kinds: Vec<DiagnosticKind>,
    },
    /// Monte Carlo sweeps over a simulated scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Shipped scenario preset (`echs` or `auxiliary`).
        #[arg(long)]
        preset: Option<String>,
        /// Noise variances for the default noise-grid sweep.
        #[arg(long, value_delimiter = ',')]
        variances: Vec<f64>,
        /// Trials per grid point for the default noise-grid sweep.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Regenerates the ECHS-style tables and noise-grid data from shipped presets.
    Replicate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Trials per noise variance.
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate { common } => commands::estimate(&common),
        Command::Bounds { common, slice } => commands::bounds(&common, &slice),
        Command::Bootstrap { common, slice, seed, replicates } => commands::bootstrap(&common, &slice, seed, replicates),
        Command::Diagnose { common, covariates, kinds } => commands::diagnose(&common, covariates, kinds),
        Command::Simulate { common, seed, preset, variances, trials } => {
            commands::simulate(&common, seed, preset.as_deref(), variances, trials)
        }
        Command::Replicate { common, seed, trials } => commands::replicate(&common, seed, trials),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
