//! The `polylogue` command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid or inconsistent data,
//! 4 numeric failure (including solver non-convergence).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ConfigFile;

use crate::error::PolylogueError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "polylogue", version, about = "Persona-vector monitoring of reasoning traces")]
struct Cli {
    /// TOML file with defaults for any subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-trace work
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a persona bank from contrastive response sets
    ExtractPersonas(ExtractArgs),
    /// Project traces onto a bank and export the score matrices
    Project(ProjectArgs),
    /// Fit the global whitening transform on pooled projections
    Whiten(WhitenArgs),
    /// Paragraph-ranking MRR with random and frequency baselines
    Mrr(MrrArgs),
    /// Write the per-trace feature table
    Features(FeaturesArgs),
    /// Nested cross-validated sparse logistic fit
    Fit(FitArgs),
    /// Nonzero coefficients ranked by magnitude
    Coeffs(CoeffsArgs),
    /// Turn a fitted model into a steering schedule
    DeriveStrategy(StrategyArgs),
    /// Replay stored traces under a steering schedule
    SteerSim(SteerArgs),
    /// Pick the steering layer and coefficient from judge readouts
    TuneSelect(TuneArgs),
    /// Generate a synthetic dataset with planted structure
    Synth(SynthArgs),
    /// Export progress-binned similarity and label profiles as CSV
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Directory with <persona>/positive and <persona>/negative bundle folders
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Persona registry to use instead of the built-in one
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Default steering coefficient stored in the bank
    #[arg(long)]
    alpha: Option<f64>,
    /// Also write the persona registry as JSON
    #[arg(long)]
    write_registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    whitening: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WhitenArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eig_floor: Option<f64>,
}

#[derive(Debug, Args)]
struct MrrArgs {
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Fitted whitening; fit on the given traces when absent
    #[arg(long)]
    whitening: Option<PathBuf>,
    /// Rank raw projections instead of whitened ones
    #[arg(long)]
    no_whiten: bool,
    /// JSON array of {"trace_id", "paragraph", "persona"} labels
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "unknown")]
    model: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Polylogue,
    Activation,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_bins: Option<usize>,
    /// Replace the bank with seeded random unit directions of the same shape
    #[arg(long)]
    random_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "polylogue")]
    baseline: Baseline,
    /// PCA components for the activation baseline
    #[arg(long)]
    components: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Cross-validation report; printed to stdout when absent
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "polylogue")]
    condition: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c_min: Option<f64>,
    #[arg(long)]
    c_max: Option<f64>,
    #[arg(long)]
    c_count: Option<usize>,
    #[arg(long)]
    outer_folds: Option<usize>,
    #[arg(long)]
    inner_folds: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
}

#[derive(Debug, Args)]
struct CoeffsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Bank whose persona names label the features
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    n_bins: Option<usize>,
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Debug, Args)]
struct StrategyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training traces, used for the median paragraph count
    #[arg(long, conflicts_with = "median_paragraphs")]
    traces: Option<PathBuf>,
    #[arg(long)]
    median_paragraphs: Option<usize>,
    #[arg(long)]
    n_bins: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Override the bank's default steering coefficient
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct SteerArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TuneArgs {
    /// JSONL judge readouts
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    mass_threshold: Option<f64>,
    #[arg(long, default_value = "unknown")]
    model: String,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "traces")]
    num_traces: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    noise_ratio: Option<f64>,
    #[arg(long)]
    paragraphs: Option<usize>,
    #[arg(long)]
    extraction_traces: Option<usize>,
    #[arg(long)]
    label_bin: Option<usize>,
    #[arg(long)]
    label_persona: Option<usize>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_bins: Option<usize>,
    #[arg(long)]
    whitening: Option<PathBuf>,
}

fn exit_code(err: &PolylogueError) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

/// Runs one command. `argv` holds the arguments after the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = std::iter::once(OsString::from("polylogue")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> crate::Result<()> {
    let config = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.threads.or(config.threads) {
        Some(0) => Err(PolylogueError::Config("--threads must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| PolylogueError::Config(e.to_string()))?;
            pool.install(|| dispatch(cli.command, &config))
        }
        None => dispatch(cli.command, &config),
    }
}

fn dispatch(command: Command, config: &ConfigFile) -> crate::Result<()> {
    match command {
        Command::ExtractPersonas(a) => commands::extract_personas(a, config),
        Command::Project(a) => commands::project(a),
        Command::Whiten(a) => commands::whiten(a, config),
        Command::Mrr(a) => commands::mrr(a, config),
        Command::Features(a) => commands::features(a, config),
        Command::Fit(a) => commands::fit(a, config),
        Command::Coeffs(a) => commands::coeffs(a, config),
        Command::DeriveStrategy(a) => commands::derive_strategy(a, config),
        Command::SteerSim(a) => commands::steer_sim(a),
        Command::TuneSelect(a) => commands::tune_select(a, config),
        Command::Synth(a) => commands::synth(a, config),
        Command::PlotData(a) => commands::plot_data(a, config),
    }
}
