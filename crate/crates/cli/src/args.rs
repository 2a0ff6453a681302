use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mpenssar", version, about = "Signature-based multivariate spatial autoregression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic dataset bundles.
    Simulate(SimulateArgs),
    /// Select and fit a model on a bundle.
    Fit(FitArgs),
    /// Predict the test units of a fitted run.
    Predict(PredictArgs),
    /// Test RMSE and spatial-matrix errors of one or more fitted runs.
    Evaluate(EvaluateArgs),
    /// Theoretical constants and the misselection bound.
    Constants(ConstantsArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML simulation config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed; replication seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Ov,
    Sv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightsArg {
    Knn,
    Idw,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Bundle directory with coords.csv, paths.csv and y.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML fit config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed truncation order; skips order selection.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub m_max: Option<usize>,
    /// Fixed ridge parameter; skips the validation grid.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `auto` for the slope heuristic or a positive constant.
    #[arg(long)]
    pub kpen: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    /// k for k-NN, minimum neighbour count for inverse distance.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Keep raw weights instead of row-normalising.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Output directory of a `fit` run.
    #[arg(long)]
    pub fit: PathBuf,
    /// Bundle directory; defaults to the one the fit used.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directories of `fit` runs, all on the same bundle and split.
    #[arg(long, required = true, num_args = 1..)]
    pub fit: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Omit the pooled RMSE row.
    #[arg(long)]
    pub per_column_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Sample size for the bound; overrides the config.
    #[arg(long)]
    pub n: Option<f64>,
    /// Evaluate the bound even below the validity threshold.
    #[arg(long)]
    pub unchecked: bool,
    #[arg(long)]
    pub out: PathBuf,
}
