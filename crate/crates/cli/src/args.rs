use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use regime_switch::em::InitStrategy;
use regime_switch::select::Criterion;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "regime-switch", version, about = "Markov-switching VAR pipeline for car-following data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Random seed. Falls back to the config file, then REGIME_SWITCH_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for restarts, chains and grid cells (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Output directory.
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,

    /// Increase log detail (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw recordings into a canonical series.
    Ingest(IngestArgs),
    /// Generate a synthetic series from a model file.
    Simulate(SimulateArgs),
    /// Estimate a model by EM or Gibbs sampling.
    Fit(FitArgs),
    /// Regime probabilities and classification under a fitted model.
    Classify(ModelInputArgs),
    /// Regime summary table under a fitted model.
    Report(ModelInputArgs),
    /// Multi-step forecasts, optionally scored on a hold-out block.
    Forecast(ForecastArgs),
    /// Information-criterion search over lag orders and regime counts.
    Select(SelectArgs),
    /// Repeat a recorded run from its manifest and verify the outputs.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum IngestFormat {
    #[default]
    Fcd,
    Smartphone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Em,
    Gibbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Init {
    Kmeans,
    Random,
}

impl From<Init> for InitStrategy {
    fn from(i: Init) -> Self {
        match i {
            Init::Kmeans => InitStrategy::KmeansOnResiduals,
            Init::Random => InitStrategy::RandomResponsibilities,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// FCD csv file.
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<IngestFormat>,
    /// Leader phone log (smartphone format).
    #[arg(long)]
    pub leader: Option<PathBuf>,
    /// Follower phone log (smartphone format).
    #[arg(long)]
    pub follower: Option<PathBuf>,
    /// Output sampling rate in Hz for aligned phone logs.
    #[arg(long)]
    pub rate_hz: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model JSON to simulate from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of rows to keep.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Sample interval in seconds stamped on the output series.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct SpecArgs {
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long)]
    pub regimes: Option<usize>,
    /// Regress v on lagged (a, dv, h) instead of a full VAR.
    #[arg(long)]
    pub regression: bool,
    /// Each equation uses only its own lags.
    #[arg(long)]
    pub diagonal: bool,
}

#[derive(Debug, Args, Default)]
pub struct EmArgs {
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum)]
    pub init: Option<Init>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Canonical series csv.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub em: EmArgs,
    /// Gibbs sweeps per chain, burn-in included.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Gibbs sweeps discarded per chain.
    #[arg(long = "burn-in")]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelInputArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Further models scored against the same hold-out block (implies --holdout).
    #[arg(long)]
    pub compare: Vec<PathBuf>,
    /// Forecast the last `steps` rows from the rows before them.
    #[arg(long)]
    pub holdout: bool,
    /// Write observed-versus-predicted rows per channel.
    #[arg(long)]
    pub emit_plot_data: bool,
    /// Enumerate regime paths instead of collapsing the mixture.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub coverage: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Lag orders, e.g. `1..5`, `3` or `1,2,4`.
    #[arg(long)]
    pub lags: Option<String>,
    /// Regime counts in the same syntax.
    #[arg(long)]
    pub regimes: Option<String>,
    #[arg(long)]
    pub criterion: Option<Criterion>,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long)]
    pub regression: bool,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}
