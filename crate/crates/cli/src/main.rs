//! Batch front end for the tensorcast library. Each subcommand is a pure
//! function of its input files, flags, and seeds: rerunning with the same
//! arguments rewrites the same bytes (wall-clock fields in reports aside).
//! Every run leaves a manifest.json beside its outputs.
//!
//! Exit codes: 0 success, 2 usage or invalid configuration, 1 file trouble,
//! 3 numerical divergence.

mod manifest;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tensorcast::Error;

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Capping the pool changes scheduling only; all parallel results are
        // collected in index order, so outputs do not depend on it.
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = run::dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_divergence() {
        return 3;
    }
    match e {
        Error::Io(_) | Error::Parse { .. } => 1,
        _ => 2,
    }
}

#[derive(Parser)]
#[command(
    name = "tensorcast",
    version,
    about = "Spectrum occupancy experiments: synthesize, decompose, complete, forecast, detect"
)]
struct Cli {
    /// Cap the worker thread count (results do not depend on it)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic occupancy tensor with its ground truth
    Generate(GenerateArgs),
    /// Fit factor matrices to a tensor, or sweep a range of ranks
    Decompose(DecomposeArgs),
    /// Fill the hidden entries of a tensor by iterated factor fits
    Complete(CompleteArgs),
    /// Forecast the trailing days of a tensor and score the forecast
    Predict(PredictArgs),
    /// Sweep missing ratios and record both completion variants' errors
    Evaluate(EvaluateArgs),
    /// Threshold a predicted tensor against ground truth into an ROC curve
    Roc(RocArgs),
    /// Compare {lstm, ar} x {factor-space, per-fiber} on one tensor
    Table1(Table1Args),
    /// Run one scenario end to end and emit every curve as CSV
    Figures(FiguresArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorArg {
    Lstm,
    Ar,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Forecast the temporal factor columns of a decomposition
    Cpd,
    /// Forecast every (channel, slot) series directly
    Raw,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    /// Fit that solves only over observed entries
    Masked,
    /// Ordinary fit on the imputed tensor
    Plain,
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario TOML; keys left out take the built-in defaults
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a mask hiding this fraction of entries, in [0, 1)
    #[arg(long)]
    missing: Option<f64>,
    /// Mask seed; defaults to the scenario seed plus one
    #[arg(long)]
    mask_seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Tensor file to fit
    #[arg(long)]
    input: PathBuf,
    /// Decomposition rank [default: 10]
    #[arg(long, conflicts_with = "ranks")]
    rank: Option<usize>,
    /// Inclusive rank range LO..HI; writes rank_sweep.csv instead of factors
    #[arg(long, value_parser = parse_range)]
    ranks: Option<(usize, usize)>,
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
    /// Relative fit improvement below which the sweeps stop
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Ridge weight on each least-squares solve; 0 is the plain fit
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Factor initialization seed
    #[arg(long, default_value_t = 0)]
    als_seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompleteArgs {
    /// Tensor file; entries the mask hides are ignored
    #[arg(long)]
    input: PathBuf,
    /// Observation mask, 1 = observed
    #[arg(long)]
    mask: PathBuf,
    /// Reference tensor for scoring the hidden entries
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Masked)]
    variant: VariantArg,
    /// Cap on impute-and-refit passes
    #[arg(long, default_value_t = 50)]
    max_outer: usize,
    /// Relative change of the imputed block below which the passes stop
    #[arg(long, default_value_t = 1e-4)]
    outer_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
    /// Relative fit improvement below which the sweeps stop
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Ridge weight inside each fit; stabilizes the refit loop on noisy
    /// data, 0 disables
    #[arg(long, default_value_t = 0.1)]
    ridge: f64,
    /// Factor initialization seed
    #[arg(long, default_value_t = 0)]
    als_seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Forecasting knobs shared by predict, table1, and figures. Defaults match
/// the stock experiment: rank 10 on a 20x240x100 tensor, 80 learning days,
/// 20 predicted, a 4-layer 4-unit recurrent model at learning rate 0.05 for
/// 300 epochs, order-7 autoregression.
#[derive(Args, Clone)]
struct ForecastArgs {
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Learning days at the front of the tensor
    #[arg(long, default_value_t = 80)]
    n_learn: usize,
    /// Forecast days; learning plus forecast must cover the whole tensor
    #[arg(long, default_value_t = 20)]
    n_predict: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    /// Stacked recurrent layers
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Units per layer
    #[arg(long, default_value_t = 4)]
    width: usize,
    /// Weight initialization seed
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    /// Autoregressive baseline order
    #[arg(long, default_value_t = 7)]
    ar_order: usize,
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
    /// Relative fit improvement below which the sweeps stop
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Ridge weight on the factor fit. Keeps the columns individually
    /// forecastable instead of mutually cancelling; 0 disables
    #[arg(long, default_value_t = 0.1)]
    ridge: f64,
    /// Factor initialization seed
    #[arg(long, default_value_t = 0)]
    als_seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    /// Tensor file covering learning and forecast days
    #[arg(long)]
    input: PathBuf,
    /// Observation mask over the learning days; switches to the joint
    /// complete-then-forecast path
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Fit variant for the joint path
    #[arg(long, value_enum, default_value_t = VariantArg::Masked)]
    variant: VariantArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Cpd)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = PredictorArg::Lstm)]
    predictor: PredictorArg,
    #[command(flatten)]
    forecast: ForecastArgs,
    /// Cap on impute-and-refit passes (joint path)
    #[arg(long, default_value_t = 50)]
    max_outer: usize,
    /// Relative change of the imputed block below which the passes stop
    #[arg(long, default_value_t = 1e-4)]
    outer_tol: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Tensor file; each sweep point hides a random subset of its entries
    #[arg(long)]
    input: PathBuf,
    /// Missing ratios to sweep, comma separated, each in [0, 1)
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    ratios: Vec<f64>,
    /// Base mask seed; sweep point i draws with seed + i
    #[arg(long, default_value_t = 0)]
    mask_seed: u64,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Cap on impute-and-refit passes
    #[arg(long, default_value_t = 50)]
    max_outer: usize,
    /// Relative change of the imputed block below which the passes stop
    #[arg(long, default_value_t = 1e-4)]
    outer_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
    /// Relative fit improvement below which the sweeps stop
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Ridge weight inside each fit; 0 disables
    #[arg(long, default_value_t = 0.1)]
    ridge: f64,
    /// Factor initialization seed
    #[arg(long, default_value_t = 0)]
    als_seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RocArgs {
    /// Predicted tensor to threshold
    #[arg(long)]
    predicted: PathBuf,
    /// Ground-truth occupancy; when it has more days than the prediction,
    /// its trailing days are compared
    #[arg(long)]
    truth: PathBuf,
    /// Distinct threshold values to sweep
    #[arg(long, default_value_t = 200)]
    thresholds: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Table1Args {
    /// Tensor file covering learning and forecast days
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    forecast: ForecastArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FiguresArgs {
    /// Scenario TOML; keys left out take the built-in defaults
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Inclusive rank range LO..HI for the rank sweep
    #[arg(long, value_parser = parse_range, default_value = "1..20")]
    ranks: (usize, usize),
    /// Missing ratios for the completion sweep
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    ratios: Vec<f64>,
    /// Missing ratio for the per-iteration completion curves
    #[arg(long, default_value_t = 0.3)]
    missing: f64,
    /// Base mask seed
    #[arg(long, default_value_t = 0)]
    mask_seed: u64,
    #[command(flatten)]
    forecast: ForecastArgs,
    /// Cap on impute-and-refit passes
    #[arg(long, default_value_t = 50)]
    max_outer: usize,
    /// Relative change of the imputed block below which the passes stop
    #[arg(long, default_value_t = 1e-4)]
    outer_tol: f64,
    /// Distinct threshold values on the detection curves
    #[arg(long, default_value_t = 200)]
    thresholds: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Parses "LO..HI" with both ends included, so 1..20 sweeps twenty ranks.
fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("expected LO..HI, got {s:?}"))?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad lower bound {lo:?}"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad upper bound {hi:?}"))?;
    if lo == 0 || hi < lo {
        return Err(format!("range {s} must satisfy 1 <= LO <= HI"));
    }
    Ok((lo, hi))
}
