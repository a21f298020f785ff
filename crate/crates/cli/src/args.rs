use std::path::PathBuf;

use auctionsim::inference::PercentileWeighting;
use auctionsim::PricingRule;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "auctionsim", version, about = "Repeated ad auctions with no-regret bidders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write per-run revenues and window bid counts.
    Run(RunArgs),
    /// Revenue under a range of soft floors and/or hard reserves.
    Sweep(SweepArgs),
    /// Infer bidder values from observed bids under a hypothesized mechanism.
    Infer(InferArgs),
    /// Coarse Bayes correlated equilibrium gap of a recorded trace.
    Bce(BceArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Number of runs; defaults to the scenario's.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Master seed; defaults to the scenario's.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Horizon override.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: ScenarioArgs,
    /// Pricing rule: first, second, reserve:R or soft:S.
    #[arg(long)]
    pub mechanism: Option<PricingRule>,
    /// Record the measurement window to trace.csv.
    #[arg(long)]
    pub trace: bool,
    /// Draw clicks instead of using expected revenue.
    #[arg(long)]
    pub realized_clicks: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ScenarioArgs,
    /// Comma-separated soft floors.
    #[arg(long, value_delimiter = ',')]
    pub sweep_values: Vec<f64>,
    /// Comma-separated hard reserves.
    #[arg(long, value_delimiter = ',')]
    pub reserve_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Weighting {
    Cumulative,
    Bracket,
}

impl From<Weighting> for PercentileWeighting {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Cumulative => PercentileWeighting::Cumulative,
            Weighting::Bracket => PercentileWeighting::Bracket,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Observed bids: a `percentile,observed_bid` table, a bids.csv from
    /// `run`, or one raw bid per line.
    #[arg(long)]
    pub bids: PathBuf,
    /// Hypothesized pricing rule.
    #[arg(long)]
    pub mechanism: PricingRule,
    #[arg(long, default_value_t = auctionsim::inference::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    /// Simulation runs per iteration.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub bidders: usize,
    #[arg(long, default_value_t = 200_000)]
    pub horizon: usize,
    /// Bid grid levels per currency unit.
    #[arg(long, default_value_t = 10)]
    pub grid_resolution: usize,
    /// Percentiles to match, ignored for percentile tables.
    #[arg(long, value_delimiter = ',')]
    pub percentiles: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = Weighting::Cumulative)]
    pub weighting: Weighting,
    /// Known values at the percentiles; prints the value MAE.
    #[arg(long, value_delimiter = ',')]
    pub true_values: Option<Vec<f64>>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BceArgs {
    /// Scenario the trace was recorded under.
    #[arg(long)]
    pub scenario: PathBuf,
    /// trace.csv written by `run --trace`.
    #[arg(long)]
    pub trace_file: PathBuf,
    /// Pricing rule override, as passed to `run`.
    #[arg(long)]
    pub mechanism: Option<PricingRule>,
    /// Restrict to one run; all runs are pooled otherwise.
    #[arg(long)]
    pub run_seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}
