//! Batch driver for the gradgibbs library: sampling runs, effective-matrix
//! estimation, decay fits, and Gaussian-limit verification, all steered by a
//! JSON configuration and recorded in a reproducibility manifest.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical/runtime error,
//! 4 a verification check failed.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod archive;
mod commands;
mod config;
mod manifest;

/// CLI-level error carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, flags, or missing input files.
    Config(String),
    /// A computation failed after the configuration was accepted.
    Core(gradgibbs::Error),
    /// The run completed but a verification check did not pass.
    Check(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            // Invalid input discovered inside the library is still a
            // configuration problem (bad mixture, size mismatch, ...).
            CliError::Core(gradgibbs::Error::InvalidInput(_)) => 2,
            CliError::Core(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    /// Manifest status string for a failed run.
    pub fn status(&self) -> &'static str {
        match self {
            CliError::Check(_) => "check-failed",
            _ => "error",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Check(msg) => write!(f, "verification failed: {msg}"),
        }
    }
}

impl From<gradgibbs::Error> for CliError {
    fn from(e: gradgibbs::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(gradgibbs::Error::Io(e))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gradgibbs",
    version,
    about = "Gradient Gibbs sampling, homogenization, and Gaussian-limit checks"
)]
struct Cli {
    /// JSON run configuration (required by every subcommand except `report`)
    #[arg(long, global = true, env = "GRADGIBBS_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed; overrides the `seed` field of the configuration
    #[arg(long, global = true, env = "GRADGIBBS_SEED", value_name = "N")]
    seed: Option<u64>,

    /// Worker threads (0 = one per core)
    #[arg(
        long,
        global = true,
        env = "GRADGIBBS_WORKERS",
        value_name = "N",
        default_value_t = 0
    )]
    workers: usize,

    /// Output directory for archives, reports, and the manifest
    #[arg(long, global = true, env = "GRADGIBBS_OUT", value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Draw thinned (conductance, height) samples and archive them
    Sample,
    /// Estimate the effective matrix by the corrector and walk routes
    Homogenize,
    /// Fit the decay rate of second differences of annealed heat kernels
    WalkDecay,
    /// Solve correctors, report residuals and the corrector-route matrix
    Corrector,
    /// Check sampled fields against the predicted Gaussian limit
    VerifyGff {
        /// Run the sampler and the matrix estimate in-process instead of
        /// reading an archive and a matrix from the configuration
        #[arg(long)]
        end_to_end: bool,
    },
    /// Summarize a manifest and re-verify its output checksums
    Report {
        /// Run directory or manifest path
        path: PathBuf,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Sample => "sample",
            Cmd::Homogenize => "homogenize",
            Cmd::WalkDecay => "walk-decay",
            Cmd::Corrector => "corrector",
            Cmd::VerifyGff { .. } => "verify-gff",
            Cmd::Report { .. } => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gradgibbs: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if cli.workers > 0 {
        // Ignore a pool that already exists; the manifest records the
        // effective count below either way.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }

    if let Cmd::Report { path } = &cli.cmd {
        return commands::report::run(path);
    }

    let config_path = cli.config.as_deref().ok_or_else(|| {
        CliError::Config(format!(
            "--config is required for `{}` (or set GRADGIBBS_CONFIG)",
            cli.cmd.name()
        ))
    })?;
    let mut cfg = config::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let out_dir = cli
        .out
        .unwrap_or_else(|| PathBuf::from(format!("gradgibbs-{}", cli.cmd.name())));
    let mut run = manifest::Run::create(cli.cmd.name(), &out_dir, &cfg)?;

    let result = match &cli.cmd {
        Cmd::Sample => commands::sample::run(&mut run, &cfg),
        Cmd::Homogenize => commands::homogenize::run(&mut run, &cfg),
        Cmd::WalkDecay => commands::walk_decay::run(&mut run, &cfg),
        Cmd::Corrector => commands::corrector::run(&mut run, &cfg),
        Cmd::VerifyGff { end_to_end } => commands::verify_gff::run(&mut run, &cfg, *end_to_end),
        Cmd::Report { .. } => unreachable!("handled above"),
    };

    // Success or not, the run leaves a manifest behind; an early stop is
    // recorded with a status other than "ok".
    match result {
        Ok(()) => run.finish(None),
        Err(e) => {
            run.finish(Some(&e))?;
            Err(e)
        }
    }
}
