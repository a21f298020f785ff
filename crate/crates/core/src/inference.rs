//! Value inference from observed bid percentiles.
//!
//! Starting from values equal to the observed bids, each iteration simulates
//! symmetric bidders whose types sit at the current inferred values, reads
//! off the predicted bid at every percentile and moves each value towards
//! the level that would reproduce the observed bid under the predicted
//! shading factor. Values are kept nondecreasing across percentiles.

use crate::env::{BidGridConfig, BidderConfig, ClauseConfig, ClauseSet, Scenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::learners::{Algorithm, LearnerConfig, DEFAULT_HEDGE_ETA};
use crate::mechanisms::MechanismSpec;
use crate::simulator::{run_batch, RunOptions};

pub const DEFAULT_PERCENTILES: [f64; 7] = [10.0, 25.0, 40.0, 50.0, 60.0, 75.0, 90.0];
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Values and bids below this are treated as zero by the shading guards.
pub const SHADING_GUARD: f64 = 1e-6;

/// How much probability each percentile level carries as a type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PercentileWeighting {
    /// Level `p_k` carries `(p_k - p_{k-1}) / p_last`, so the cumulative
    /// distribution at level k is `p_k / p_last`.
    #[default]
    Cumulative,
    /// Level `p_k` carries the bracket between the midpoints to its
    /// neighbours, with the outer brackets running to 0 and 100.
    Bracket,
}

/// Nearest-rank percentiles of an unweighted sample.
pub fn observed_percentiles(samples: &[f64], percentiles: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_percentiles(percentiles)?;
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse("non-finite bid sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(percentiles
        .iter()
        .map(|&p| {
            let rank = ((p * n as f64) / 100.0).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        })
        .collect())
}

/// Nearest-rank percentiles of a weighted sample (e.g. bid counts): the
/// smallest value whose cumulative weight reaches `p` percent of the total.
pub fn weighted_percentiles(values: &[f64], weights: &[f64], percentiles: &[f64]) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch { left: values.len(), right: weights.len() });
    }
    check_percentiles(percentiles)?;
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::NegativeProbability { field: "sample weights".into() });
    }
    let mut pairs: Vec<(f64, f64)> =
        values.iter().copied().zip(weights.iter().copied()).filter(|&(_, w)| w > 0.0).collect();
    if pairs.is_empty() {
        return Err(Error::EmptySamples);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let slack = 1e-9 * total;
    Ok(percentiles
        .iter()
        .map(|&p| {
            let target = p * total / 100.0 - slack;
            let mut cum = 0.0;
            for &(v, w) in &pairs {
                cum += w;
                if cum >= target {
                    return v;
                }
            }
            pairs[pairs.len() - 1].0
        })
        .collect())
}

fn check_percentiles(percentiles: &[f64]) -> Result<()> {
    if percentiles.is_empty() {
        return Err(Error::InvalidScenario("empty percentile list".into()));
    }
    if percentiles.iter().any(|&p| !(p > 0.0 && p < 100.0)) {
        return Err(Error::InvalidScenario("percentiles must lie strictly between 0 and 100".into()));
    }
    if percentiles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidScenario("percentiles must be strictly increasing".into()));
    }
    Ok(())
}

/// Probability of each percentile level when used as a type distribution.
pub fn percentile_weights(percentiles: &[f64], weighting: PercentileWeighting) -> Result<Vec<f64>> {
    check_percentiles(percentiles)?;
    let k = percentiles.len();
    let raw: Vec<f64> = match weighting {
        PercentileWeighting::Cumulative => {
            let mut prev = 0.0;
            percentiles
                .iter()
                .map(|&p| {
                    let w = p - prev;
                    prev = p;
                    w
                })
                .collect()
        }
        PercentileWeighting::Bracket => (0..k)
            .map(|i| {
                let lo = if i == 0 { 0.0 } else { (percentiles[i - 1] + percentiles[i]) / 2.0 };
                let hi = if i + 1 == k { 100.0 } else { (percentiles[i] + percentiles[i + 1]) / 2.0 };
                hi - lo
            })
            .collect(),
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|w| w / total).collect())
}

/// One step of the value update: with shading `sigma = b_predicted / v`,
/// move `v` a fraction `alpha` of the way towards `b_observed / sigma`.
/// Near-zero `v` or `b_predicted` use `sigma = 1`.
pub fn update_value(v: f64, b_observed: f64, b_predicted: f64, alpha: f64) -> f64 {
    let target = if v < SHADING_GUARD || b_predicted < SHADING_GUARD {
        b_observed
    } else {
        v * (b_observed / b_predicted)
    };
    v + alpha * (target - v)
}

/// Running maximum from left to right.
pub fn flatten_monotone(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut running = f64::NEG_INFINITY;
    for &v in values {
        running = running.max(v);
        out.push(running);
    }
    out
}

/// Mean absolute difference.
pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Simulation and update settings for [`infer_values`].
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub percentiles: Vec<f64>,
    pub weighting: PercentileWeighting,
    pub alpha: f64,
    pub max_iterations: usize,
    pub runs_per_iteration: usize,
    /// Symmetric bidders per auction.
    pub num_bidders: usize,
    pub horizon: usize,
    pub window_fraction: f64,
    pub eta: f64,
    /// Bid grid levels per currency unit.
    pub grid_resolution: usize,
    /// The bid grid spans `[0, ceil(max observed bid * grid_headroom)]`.
    pub grid_headroom: f64,
    pub env_seed: u64,
    pub master_seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            percentiles: DEFAULT_PERCENTILES.to_vec(),
            weighting: PercentileWeighting::default(),
            alpha: DEFAULT_ALPHA,
            max_iterations: 100,
            runs_per_iteration: 10,
            num_bidders: 2,
            horizon: 200_000,
            window_fraction: 0.1,
            eta: DEFAULT_HEDGE_ETA,
            grid_resolution: 10,
            grid_headroom: 1.34,
            env_seed: 1,
            master_seed: 1,
        }
    }
}

impl InferenceConfig {
    fn validate(&self) -> Result<()> {
        check_percentiles(&self.percentiles)?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidScenario(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.max_iterations == 0 || self.runs_per_iteration == 0 || self.num_bidders == 0 {
            return Err(Error::InvalidScenario(
                "iterations, runs and bidders must be positive".into(),
            ));
        }
        if self.grid_resolution == 0 || !(self.grid_headroom >= 1.0) {
            return Err(Error::InvalidScenario("invalid inference bid grid".into()));
        }
        Ok(())
    }

    /// Bid grid for the given observed bids.
    pub fn bid_grid(&self, observed: &[f64]) -> Vec<f64> {
        let max_obs = observed.iter().copied().fold(0.0, f64::max);
        let top = (max_obs * self.grid_headroom).ceil().max(1.0) as usize;
        let per_unit = self.grid_resolution;
        (0..=top * per_unit).map(|i| i as f64 / per_unit as f64).collect()
    }
}

/// Symmetric single-query scenario whose types sit at `values` with CTR 1.
pub fn inference_scenario(
    values: &[f64],
    weights: &[f64],
    grid: &[f64],
    mechanism: &MechanismSpec,
    config: &InferenceConfig,
) -> Result<Scenario> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch { left: values.len(), right: weights.len() });
    }
    Scenario::new(ScenarioConfig {
        id: "inference".into(),
        queries: Vec::new(),
        query_dist: vec![1.0],
        bid_grid: BidGridConfig::Levels(grid.to_vec()),
        clauses: ClauseConfig::Named(ClauseSet::Full),
        mechanism: *mechanism,
        learner: LearnerConfig {
            algorithm: Algorithm::Hedge,
            eta: Some(config.eta),
            gamma: None,
            raw_rewards: false,
        },
        horizon: config.horizon,
        window_fraction: config.window_fraction,
        env_seed: config.env_seed,
        master_seed: config.master_seed,
        runs: config.runs_per_iteration,
        bidders: vec![BidderConfig {
            count: config.num_bidders,
            types: config.percentiles.iter().map(|p| format!("p{p}")).collect(),
            type_dist: weights.to_vec(),
            values: values.iter().map(|&v| vec![v]).collect(),
            ctrs: vec![vec![1.0]; values.len()],
        }],
    })
}

/// Mean window bid of every type, pooled over the symmetric bidders, for each
/// run. A type absent from a run's window falls back to its value.
pub fn predicted_bids_per_run(scenario: &Scenario) -> Result<Vec<Vec<f64>>> {
    let batch = run_batch(scenario, scenario.runs(), RunOptions::default())?;
    let grid = scenario.bid_grid();
    let bidder = &scenario.bidders()[0];
    let num_types = bidder.num_types();
    Ok(batch
        .runs
        .iter()
        .map(|run| {
            let h = &run.bid_histogram;
            (0..num_types)
                .map(|ty| {
                    let mut total = 0u64;
                    let mut sum = 0.0;
                    for b in 0..scenario.num_bidders() {
                        for (k, c) in h.bid_counts(b, ty).into_iter().enumerate() {
                            total += c;
                            sum += c as f64 * grid[k];
                        }
                    }
                    if total == 0 {
                        bidder.value(ty, 0)
                    } else {
                        sum / total as f64
                    }
                })
                .collect()
        })
        .collect())
}

/// Column means of per-run vectors.
pub fn average_runs(per_run: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = per_run.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.len()];
    for run in per_run {
        for (o, x) in out.iter_mut().zip(run) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= per_run.len() as f64);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Values simulated in this iteration.
    pub values: Vec<f64>,
    pub predicted_bids: Vec<f64>,
    pub run_predicted_bids: Vec<Vec<f64>>,
    /// MAE between observed and predicted bids.
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub percentiles: Vec<f64>,
    pub observed_bids: Vec<f64>,
    pub weights: Vec<f64>,
    pub bid_grid: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    /// Index into `iterations` of the smallest bid MAE.
    pub best: usize,
    pub converged: bool,
    /// True when the observed bids were not monotone and had to be flattened.
    pub input_flattened: bool,
}

impl InferenceResult {
    pub fn best_iteration(&self) -> &IterationRecord {
        &self.iterations[self.best]
    }

    pub fn inferred_values(&self) -> &[f64] {
        &self.best_iteration().values
    }
}

/// Iterative percentile-matching inference under `mechanism`.
pub fn infer_values(
    observed_bids: &[f64],
    mechanism: &MechanismSpec,
    config: &InferenceConfig,
) -> Result<InferenceResult> {
    config.validate()?;
    mechanism.validate()?;
    if observed_bids.len() != config.percentiles.len() {
        return Err(Error::LengthMismatch {
            left: observed_bids.len(),
            right: config.percentiles.len(),
        });
    }
    if observed_bids.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
        return Err(Error::NegativeValue {
            field: "observed bids".into(),
            value: observed_bids.iter().copied().find(|b| !(*b >= 0.0)).unwrap_or(f64::NAN),
        });
    }
    let observed = flatten_monotone(observed_bids);
    let input_flattened = observed != observed_bids;
    let weights = percentile_weights(&config.percentiles, config.weighting)?;
    let grid = config.bid_grid(&observed);
    let half_step = 0.5 / config.grid_resolution as f64;

    let mut values = observed.clone();
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_iterations {
        let scenario = inference_scenario(&values, &weights, &grid, mechanism, config)?;
        let per_run = predicted_bids_per_run(&scenario)?;
        let predicted = average_runs(&per_run);
        let err = mae(&observed, &predicted)?;
        let max_gap = observed.iter().zip(&predicted).map(|(o, p)| (o - p).abs()).fold(0.0, f64::max);
        let next: Vec<f64> = values
            .iter()
            .zip(observed.iter().zip(&predicted))
            .map(|(&v, (&bo, &bp))| update_value(v, bo, bp, config.alpha))
            .collect();
        iterations.push(IterationRecord {
            iteration,
            values: values.clone(),
            predicted_bids: predicted,
            run_predicted_bids: per_run,
            mae: err,
        });
        if max_gap < half_step {
            converged = true;
            break;
        }
        values = flatten_monotone(&next);
    }
    let best = iterations
        .iter()
        .enumerate()
        .fold(0, |best, (k, rec)| if rec.mae < iterations[best].mae { k } else { best });
    Ok(InferenceResult {
        percentiles: config.percentiles.clone(),
        observed_bids: observed,
        weights,
        bid_grid: grid,
        iterations,
        best,
        converged,
        input_flattened,
    })
}

/// Per-percentile shading `1 - b/v` with a normal-approximation interval for
/// the mean across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadingReport {
    pub per_percentile: Vec<f64>,
    /// Mean over percentiles of the run-averaged shading.
    pub mean: f64,
    /// Mean shading of each run.
    pub run_means: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn shading(v: f64, b: f64) -> f64 {
    if v < SHADING_GUARD {
        0.0
    } else {
        1.0 - b / v
    }
}

fn mean_shading(values: &[f64], bids: &[f64]) -> f64 {
    values.iter().zip(bids).map(|(&v, &b)| shading(v, b)).sum::<f64>() / values.len() as f64
}

/// Shading of `predicted_bids` relative to `values`; `run_predicted_bids`
/// (one vector per run) drives the confidence interval and may be empty.
pub fn shading_report(
    values: &[f64],
    predicted_bids: &[f64],
    run_predicted_bids: &[Vec<f64>],
) -> Result<ShadingReport> {
    if values.len() != predicted_bids.len() {
        return Err(Error::LengthMismatch { left: values.len(), right: predicted_bids.len() });
    }
    if values.is_empty() {
        return Err(Error::EmptySamples);
    }
    if let Some(run) = run_predicted_bids.iter().find(|r| r.len() != values.len()) {
        return Err(Error::LengthMismatch { left: values.len(), right: run.len() });
    }
    let per_percentile: Vec<f64> =
        values.iter().zip(predicted_bids).map(|(&v, &b)| shading(v, b)).collect();
    let mean = per_percentile.iter().sum::<f64>() / per_percentile.len() as f64;
    let run_means: Vec<f64> = run_predicted_bids.iter().map(|r| mean_shading(values, r)).collect();
    let half_width = if run_means.len() > 1 {
        let m = run_means.len() as f64;
        let centre = run_means.iter().sum::<f64>() / m;
        let var = run_means.iter().map(|x| (x - centre).powi(2)).sum::<f64>() / (m - 1.0);
        1.96 * (var / m).sqrt()
    } else {
        0.0
    };
    Ok(ShadingReport {
        per_percentile,
        mean,
        run_means,
        ci_low: mean - half_width,
        ci_high: mean + half_width,
    })
}

/// Shading of the best iteration of an inference run.
pub fn shading_for(result: &InferenceResult) -> Result<ShadingReport> {
    let best = result.best_iteration();
    shading_report(&best.values, &best.predicted_bids, &best.run_predicted_bids)
}
