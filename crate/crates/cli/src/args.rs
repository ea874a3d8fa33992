use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "problm", version, about = "Progressive-batching Levenberg-Marquardt harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic instance directory.
    Generate(GenerateArgs),
    /// Solve one instance and optionally write its trace.
    Solve(SolveArgs),
    /// Run every method several times on a set of instances.
    Bench(BenchArgs),
    /// Performance profiles from a bench summary.
    Profile(ProfileArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Essential,
    EssentialRobust,
    Homography,
    Ba,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Essential => "essential",
            Kind::EssentialRobust => "essential-robust",
            Kind::Homography => "homography",
            Kind::Ba => "ba",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub kind: Kind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Correspondences (essential) or points (ba).
    #[arg(long)]
    pub points: Option<usize>,
    /// Observation noise; intensity noise for homography.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Outlier fraction (essential-robust, default 0.5).
    #[arg(long)]
    pub outliers: Option<f64>,
    /// Image side length in pixels (homography).
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    /// Size of the true warp (homography).
    #[arg(long, default_value_t = 0.05)]
    pub magnitude: f64,
    /// Number of cameras (ba).
    #[arg(long, default_value_t = 3)]
    pub cameras: usize,
}

/// Solver options shared by `solve` and `bench`. Unset options fall back to
/// the config file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverFlags {
    /// Flat `key = value` file with any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "k0-frac")]
    pub k0_frac: Option<f64>,
    /// none, smooth-truncated, geman-mcclure or welsch.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "gnc-levels")]
    pub gnc_levels: Option<usize>,
    #[arg(long = "budget-ms")]
    pub budget_ms: Option<u64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long = "grad-tol")]
    pub grad_tol: Option<f64>,
    /// Start from the ground truth rotated by this angle (radians) instead of
    /// the default start.
    #[arg(long = "init-noise")]
    pub init_noise: Option<f64>,
    /// Evaluate the full cost at every accepted iterate.
    #[arg(long)]
    pub audit: bool,
    /// Write 0 in the wall_ns column.
    #[arg(long = "no-timing")]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance directory written by `generate`.
    pub instance: PathBuf,
    /// lm, problm or problm-relaxed.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub flags: SolverFlags,
    /// Trace CSV path.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Directory for trace.csv, used when --trace is absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Instance directories.
    #[arg(required = true)]
    pub instances: Vec<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, default_value = "lm,problm,problm-relaxed", value_delimiter = ',')]
    pub method: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[command(flatten)]
    pub flags: SolverFlags,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// summary.csv written by `bench`.
    pub summary: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Largest τ on the grid.
    #[arg(long = "tau-max", default_value_t = 2.0)]
    pub tau_max: f64,
    #[arg(long = "tau-count", default_value_t = 101)]
    pub tau_count: usize,
}
