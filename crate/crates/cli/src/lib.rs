//! The `densefilter` command line.
//!
//! Exit status: 0 on success, 1 for usage errors (bad flags, missing or
//! out-of-range parameters), 2 for unreadable or invalid data, 3 when a
//! pipeline stage cannot complete.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use densefilter_core::synth::NoiseMode;
use densefilter_core::{Error, ErrorKind};
use serde::de::DeserializeOwned;

mod commands;
pub mod config;

use config::AmbiguitySign;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Pipeline => EXIT_PIPELINE,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "densefilter", version, about = "Density-based label-noise filtering and abstention for embeddings")]
struct Cli {
    /// Worker threads; defaults to one per core. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Remove likely mislabeled training rows.
    Denoise(DenoiseArgs),
    /// Fit centroids and distance limits on kept training rows.
    Calibrate(CalibrateArgs),
    /// Predict or abstain on test rows.
    Abstain(AbstainArgs),
    /// Generate synthetic embeddings with planted label noise.
    Synth(SynthArgs),
    /// Print a denoise report as a table and export its histograms.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    /// JSON config file, or any artifact with an embedded config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training set (EMB1, or CSV when the name ends in .csv).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for kept.txt, removed.txt and report.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Ground-truth sidecar from `synth`, for precision and recall.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    /// KDE bandwidth in distance units.
    #[arg(long)]
    kde_h: Option<f64>,
    #[arg(long)]
    kde_grid: Option<usize>,
    /// Peaks lower than this fraction of the tallest are ignored.
    #[arg(long)]
    min_rel_height: Option<f64>,
    #[arg(long)]
    otsu_bins: Option<usize>,
    /// Classes smaller than this pass through unfiltered [default: 2 * min-pts].
    #[arg(long)]
    min_class_size: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    l2_normalize: Option<bool>,
    /// Record stage timings in the report (makes reports differ run to run).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    timings: Option<bool>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training set the kept indices refer to.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Kept-row index file from `denoise`.
    #[arg(long)]
    kept: Option<PathBuf>,
    /// Calibrate on every labeled row instead of a kept file.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_denoise: Option<bool>,
    /// Output calibration JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    l2_normalize: Option<bool>,
    /// Gap tolerance stored with the calibration.
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Debug, Args)]
struct AbstainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Directory for decisions.csv and summary.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the calibrated eta.
    #[arg(long, conflicts_with = "target_coverage")]
    eta: Option<f64>,
    /// Picks the smallest eta whose coverage is at most this fraction.
    #[arg(long)]
    target_coverage: Option<f64>,
    /// Replaces every distance limit; `inf` disables distance rejection.
    #[arg(long)]
    tau_override: Option<f64>,
    /// `below` abstains when the two nearest distances differ by less than
    /// eta; `above` abstains when they differ by more.
    #[arg(long, value_parser = serde_value::<AmbiguitySign>)]
    ambiguity_sign: Option<AmbiguitySign>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for train.emb1, train_truth.json and, with
    /// --test-per-class, test.emb1 and test_truth.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Center spacing in units of within-std.
    #[arg(long)]
    class_sep: Option<f64>,
    #[arg(long)]
    within_std: Option<f64>,
    #[arg(long)]
    noise_frac: Option<f64>,
    #[arg(long)]
    ood_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `uniform` or `always-wrong`.
    #[arg(long, value_parser = serde_value::<NoiseMode>)]
    noise_mode: Option<NoiseMode>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    anisotropic: Option<bool>,
    #[arg(long)]
    test_per_class: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// report.json written by `denoise`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Also write histograms.csv and kde.csv here.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit status.
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
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_PIPELINE;
        }
    };
    match pool.install(|| commands::dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
