use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "scatmom",
    version,
    about = "Scattering moments, process simulation and simulated-moment fits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an ensemble and write it as CSV plus a spec JSON.
    Simulate(SimulateArgs),
    /// Compute raw and normalized scattering moments of a CSV column.
    Scatter(ScatterArgs),
    /// Estimate a model parameter by simulated-moment GMM or a regression.
    Fit(FitArgs),
    /// Build a filter bank and report its certificates.
    VerifyBank(VerifyBankArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Poisson,
    Fbm,
    #[value(alias = "levy")]
    LevyStable,
    MrmCascade,
    MrmStationary,
    Mrw,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    /// Poisson intensity λ.
    #[arg(long)]
    pub intensity: Option<f64>,
    /// Hurst exponent of fBm.
    #[arg(long, alias = "H")]
    pub hurst: Option<f64>,
    /// Stability index of the Lévy process.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Intermittency λ² of MRM/MRW models.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Integral scale exponent L (scale 2^L samples).
    #[arg(long, default_value_t = 10)]
    pub integral_scale: u32,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Samples per realization.
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub realizations: usize,
    /// Output CSV; the spec is written next to it as <stem>.spec.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column name or zero-based index.
    #[arg(long, default_value = "value")]
    pub column: String,
    /// Split the column into independent blocks of this length.
    #[arg(long)]
    pub block_len: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BankArgs {
    /// Finest wavelet scale.
    #[arg(long, default_value_t = 1)]
    pub j_min: i32,
    /// Low-pass scale M; defaults to J + 1.
    #[arg(long)]
    pub m: Option<i32>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScatterArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bank: BankArgs,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Reference scale index J₀.
    #[arg(long, default_value_t = 0)]
    pub j0: i32,
    /// Coarsest wavelet scale J.
    #[arg(long)]
    pub j: i32,
    /// First-order slope fit range, inclusive (defaults to the full range).
    #[arg(long)]
    pub fit_lo: Option<i32>,
    #[arg(long)]
    pub fit_hi: Option<i32>,
    /// Also write stationarity and intermittency reports.
    #[arg(long)]
    pub summary: bool,
    #[arg(long, default_value_t = scatmom::analysis::DEFAULT_SPREAD_THRESHOLD)]
    pub spread_threshold: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Gmm,
    Logcov,
    Wavelet,
    ScatteringSlope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingArg {
    TwoStep,
    Identity,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bank: BankArgs,
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long, default_value_t = 10)]
    pub integral_scale: u32,
    #[arg(long, value_enum, default_value_t = Estimator::Gmm)]
    pub estimator: Estimator,
    #[arg(long, value_enum, default_value_t = WeightingArg::TwoStep)]
    pub weighting: WeightingArg,
    /// Search bounds for θ; family defaults when omitted.
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub hi: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub j0: i32,
    #[arg(long, default_value_t = 5)]
    pub j: i32,
    /// Window spacing Δ (in units of 2^M) for single-block data.
    #[arg(long, default_value_t = 1)]
    pub delta: usize,
    /// Simulated realizations per θ; defaults to 16 per data block.
    #[arg(long)]
    pub n_sim: Option<usize>,
    /// Seed of the simulated moments.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Wavelet scale for the log-covariance regression.
    #[arg(long, default_value_t = 1)]
    pub scale: i32,
    #[arg(long)]
    pub lag_lo: Option<usize>,
    #[arg(long)]
    pub lag_hi: Option<usize>,
    /// Scale range of the wavelet-moment regression.
    #[arg(long, default_value_t = 1)]
    pub j_lo: i32,
    #[arg(long, default_value_t = 6)]
    pub j_hi: i32,
    /// Minimum scale gap of order-2 entries in the slope regression.
    #[arg(long, default_value_t = 3)]
    pub slope_delta: i32,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiChoice {
    Default,
    /// |Φ|² = 1 everywhere; always violates the domination bound.
    Allpass,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyBankArgs {
    #[arg(long, default_value_t = 1)]
    pub j_min: i32,
    #[arg(long, default_value_t = 10)]
    pub m: i32,
    /// Certificate grid length; the smallest admissible power of two by default.
    #[arg(long)]
    pub n_fft: Option<usize>,
    #[arg(long, value_enum, default_value_t = PhiChoice::Default)]
    pub phi: PhiChoice,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
