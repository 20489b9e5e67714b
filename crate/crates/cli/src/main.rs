//! `fieldinfer` command-line interface.
//!
//! Every command writes its result to `--output` and a sidecar
//! `<output>.manifest.json` with the resolved configuration, seeds and input
//! checksums. Exit codes: 0 success, 2 usage or configuration error, 3 data
//! error, 4 numeric failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fieldinfer::Error;

#[derive(Parser, Debug)]
#[command(name = "fieldinfer", version, about = "Simultaneous inference for mean fields on a 2D lattice")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "FIELDINFER_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Nadaraya–Watson estimate of the mean surface on the interior.
    Estimate(EstimateArgs),
    /// Simultaneous confidence region on a position grid.
    Ci(CiArgs),
    /// Test a null mean field at the grid positions.
    Test(TestArgs),
    /// Select the smoothing and variance bandwidths.
    SelectBandwidth(SelectArgs),
    /// Simulate a dataset from a mean field and a noise model.
    Simulate(SimulateArgs),
    /// Monte-Carlo coverage or size/power study.
    Study(StudyArgs),
}

#[derive(Args, Debug, Clone)]
struct SmoothArgs {
    /// Smoothing bandwidth 𝒦; selected by cross-validation when omitted.
    #[arg(long)]
    k: Option<usize>,
    /// Largest 𝒦 considered by cross-validation [default: 20, capped by the field size].
    #[arg(long)]
    k_max: Option<usize>,
    /// Smoothing kernel: quartic, triangular or uniform.
    #[arg(long = "kernel-g", default_value = "quartic")]
    kernel_g: String,
}

#[derive(Args, Debug, Clone)]
struct VbArgs {
    /// Block fraction.
    #[arg(long, default_value_t = 0.1)]
    q: f64,
    /// Candidate variance bandwidths, `a..b` or a comma list.
    #[arg(long, default_value = "1..10", value_parser = parse_gamma)]
    gamma: Gamma,
    /// Number of blocks.
    #[arg(long, default_value_t = 15)]
    iterations: usize,
    /// Pilot variance bandwidth.
    #[arg(long, default_value_t = 5.0)]
    pilot: f64,
    /// Bootstrap replicates per block.
    #[arg(long = "selection-reps", default_value_t = 200)]
    selection_reps: usize,
}

#[derive(Args, Debug, Clone)]
struct BootArgs {
    /// Variance bandwidth ℬ; selected by block subsampling when omitted.
    #[arg(long)]
    b: Option<f64>,
    /// Variance kernel: gaussian or bartlett.
    #[arg(long = "kernel-k", default_value = "gaussian")]
    kernel_k: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// homogeneous or heterogeneous.
    #[arg(long, default_value = "homogeneous")]
    mode: String,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square-root backend: auto, dense or fft.
    #[arg(long, default_value = "auto")]
    sqrt: String,
    /// Positions per axis.
    #[arg(long, default_value_t = 20)]
    grid_divisions: usize,
    #[command(flatten)]
    selection: VbArgs,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    smooth: SmoothArgs,
}

#[derive(Args, Debug)]
struct CiArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// `zero` or a CSV lattice of null values with the input's shape.
    #[arg(long, default_value = "zero")]
    null: String,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[arg(long = "kernel-k", default_value = "gaussian")]
    kernel_k: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "auto")]
    sqrt: String,
    #[command(flatten)]
    selection: VbArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, short)]
    output: PathBuf,
    /// zero, elliptical, sinusoidal or disc.
    #[arg(long, default_value = "elliptical")]
    mean: String,
    /// iid, ar or ma.
    #[arg(long, default_value = "ar")]
    noise: String,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(value_enum)]
    kind: StudyKind,
    /// JSON study configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum StudyKind {
    Coverage,
    Sizepower,
}

#[derive(Debug, Clone)]
struct Gamma(Vec<f64>);

fn parse_gamma(s: &str) -> Result<Gamma, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u32 = b.trim().parse().map_err(|e| format!("{e}"))?;
        if a == 0 || a > b {
            return Err(format!("empty or non-positive range {s}"));
        }
        return Ok(Gamma((a..=b).map(f64::from).collect()));
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Gamma)
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
enum Failure {
    Lib(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Numeric(_) => 4,
            Failure::Lib(e) => match e {
                Error::Io(_) | Error::Format { .. } | Error::Parse { .. } | Error::Empty | Error::NonFinite { .. } => 3,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Numeric(s) => write!(f, "numeric failure: {s}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Ci(a) => commands::ci(a),
        Command::Test(a) => commands::test(a),
        Command::SelectBandwidth(a) => commands::select(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Study(a) => commands::study(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
