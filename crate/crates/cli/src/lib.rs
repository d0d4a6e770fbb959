//! The `qmri` command line: dataset simulation, training of the mapping and
//! reconstruction networks, reconstruction, parameter fitting, evaluation
//! and image export.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or data, 2 when a file
//! cannot be read or written.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod augment;
mod commands;
pub mod data;
mod error;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "qmri", version, about = "Accelerated relaxometry reconstruction toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate training and test slices from a run config.
    Simulate(SimulateArgs),
    /// Write an undersampling mask.
    Mask(MaskArgs),
    /// Pre-train the mapping network on fully sampled training stacks.
    TrainMap(TrainMapArgs),
    /// Train the unrolled reconstruction network.
    TrainRecon(TrainReconArgs),
    /// Reconstruct every slice of a directory.
    Recon(ReconArgs),
    /// Fit relaxation parameter maps to magnitude stacks.
    Fit(FitArgs),
    /// Image (and optionally map) metrics as CSV.
    Eval(EvalArgs),
    /// Export the images of a container as PGM files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; `train/` and `test/` are created inside.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainMapArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainReconArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Mapping checkpoint, required when gamma3 or gamma4 is nonzero.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("method").required(true).args(["zero_filled", "model"]))]
pub struct ReconArgs {
    /// Directory of k-space slices, e.g. `DATA/test`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub zero_filled: bool,
    /// Reconstruction checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Lm,
    Network,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory of reconstructions or of k-space slices (uses `target`).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: FitMethod,
    /// Mapping checkpoint for `--method network`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Voxels whose peak magnitude is below this fraction of the stack peak are left unfitted.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of reconstructions.
    #[arg(long)]
    pub recon: PathBuf,
    /// Directory of the matching k-space slices and phantoms.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fitted maps to score against the phantom truth.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Value of the `dataset` column.
    #[arg(long, default_value = "test")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
