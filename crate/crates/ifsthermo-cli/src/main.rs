//! Batch front end for the transfer-operator toolkit.
//!
//! One command per process: read a TOML run configuration, execute the
//! named pipeline, write JSON and CSV results into the output directory.
//! Re-running with the same configuration reproduces every output byte
//! for byte; nothing here consults the clock, the environment, or an
//! unseeded random source.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failures that terminate a run. The grouping fixes the exit status:
/// configuration problems exit 2, iteration failures 3, resource caps 4,
/// filesystem trouble 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Lib(ifsthermo::Error),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Lib(e) => match e {
                ifsthermo::Error::Convergence { .. }
                | ifsthermo::Error::NumericalInstability(_)
                | ifsthermo::Error::Inconsistency(_) => 3,
                ifsthermo::Error::ResourceCap(_) => 4,
                _ => 2,
            },
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<ifsthermo::Error> for CliError {
    fn from(e: ifsthermo::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

#[derive(Parser)]
#[command(
    name = "ifsthermo",
    version,
    about = "Transfer-operator thermodynamics on self-similar attractors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the attractor grid and write its points.
    Attractor(RunArgs),
    /// Locate branched values, their images, and escape witnesses.
    Branch(RunArgs),
    /// Sample the spectral radius over a parameter list.
    RhoCurve(RunArgs),
    /// Bisect for the parameter where the spectral radius crosses 1.
    BetaC(RunArgs),
    /// Solve for the eigenfunction and eigenmeasure at one parameter.
    Rpf(RunArgs),
    /// Construct an equilibrium state and write its measure.
    KmsState(RunArgs),
    /// Construct a state and check the trace identities against it.
    KmsVerify(RunArgs),
    /// Trace the defining series below criticality, where it diverges.
    DiagnoseSubcritical(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for JSON and CSV results.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 means automatic. Overrides the config key.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let (name, args) = match &cli.command {
        Command::Attractor(a) => ("attractor", a),
        Command::Branch(a) => ("branch", a),
        Command::RhoCurve(a) => ("rho-curve", a),
        Command::BetaC(a) => ("beta-c", a),
        Command::Rpf(a) => ("rpf", a),
        Command::KmsState(a) => ("kms-state", a),
        Command::KmsVerify(a) => ("kms-verify", a),
        Command::DiagnoseSubcritical(a) => ("diagnose-subcritical", a),
    };

    // The hash in every JSON document digests the raw bytes, so the file
    // is read once and parsed from that buffer.
    let bytes = std::fs::read(&args.config).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let cfg = config::parse(&bytes)?;
    init_threads(args.threads.or(cfg.threads))?;

    let mut out = output::OutputDir::new(&args.out, name, &bytes)?;
    match name {
        "attractor" => commands::attractor(&cfg, &mut out)?,
        "branch" => commands::branch(&cfg, &mut out)?,
        "rho-curve" => commands::rho_curve(&cfg, &mut out)?,
        "beta-c" => commands::beta_c(&cfg, &mut out)?,
        "rpf" => commands::rpf(&cfg, &mut out)?,
        "kms-state" => commands::kms_state(&cfg, &mut out)?,
        "kms-verify" => commands::kms_verify(&cfg, &mut out)?,
        "diagnose-subcritical" => commands::diagnose_subcritical(&cfg, &mut out)?,
        _ => unreachable!(),
    }
    Ok(out.into_written())
}

/// Pins the rayon pool size when the user asked for one. Parallel sections
/// in the library are order-preserving maps, so the thread count never
/// changes results, only wall time.
fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    match threads {
        None | Some(0) => Ok(()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}"))),
    }
}
