//! Repeated-auction driver: per period every bidder's realized type samples an
//! action, the auction is resolved, learners update, and revenue and bid
//! metrics accumulate over the trailing measurement window.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{sample_env_sequence, EnvSequence, Scenario};
use crate::error::{contract, Result};
use crate::learners::{Draw, LearnerSpec, LearnerState};
use crate::mechanisms::{fill_counterfactual, normalize_reward, resolve, reward, Participant, PricingRule};

/// Per-run switches that do not affect the scenario itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every window period's types, actions, winner and price.
    pub record_trace: bool,
    /// Record revenue from a Bernoulli click draw instead of `ctr * price`.
    pub realized_clicks: bool,
}

/// Window bid counts indexed by (bidder, type, clause, bid).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BidHistogram {
    num_clauses: usize,
    num_bids: usize,
    offsets: Vec<usize>,
    num_types: Vec<usize>,
    counts: Vec<u64>,
}

impl BidHistogram {
    pub fn new(scenario: &Scenario) -> Self {
        let num_types: Vec<usize> = scenario.bidders().iter().map(|b| b.num_types()).collect();
        let mut offsets = Vec::with_capacity(num_types.len());
        let mut rows = 0;
        for &k in &num_types {
            offsets.push(rows);
            rows += k;
        }
        let (num_clauses, num_bids) = (scenario.clauses().len(), scenario.bid_grid().len());
        BidHistogram {
            num_clauses,
            num_bids,
            offsets,
            num_types,
            counts: vec![0; rows * num_clauses * num_bids],
        }
    }

    #[inline]
    fn base(&self, bidder: usize, ty: usize) -> usize {
        (self.offsets[bidder] + ty) * self.num_clauses * self.num_bids
    }

    #[inline]
    pub fn record(&mut self, bidder: usize, ty: usize, action: usize) {
        let base = self.base(bidder, ty);
        self.counts[base + action] += 1;
    }

    pub fn count(&self, bidder: usize, ty: usize, clause: usize, bid: usize) -> u64 {
        self.counts[self.base(bidder, ty) + clause * self.num_bids + bid]
    }

    pub fn num_bidders(&self) -> usize {
        self.offsets.len()
    }

    pub fn num_types(&self, bidder: usize) -> usize {
        self.num_types[bidder]
    }

    pub fn num_clauses(&self) -> usize {
        self.num_clauses
    }

    pub fn num_bids(&self) -> usize {
        self.num_bids
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts per bid index for one (bidder, type), summed over clauses.
    pub fn bid_counts(&self, bidder: usize, ty: usize) -> Vec<u64> {
        let base = self.base(bidder, ty);
        let mut out = vec![0; self.num_bids];
        for c in 0..self.num_clauses {
            for (b, slot) in out.iter_mut().enumerate() {
                *slot += self.counts[base + c * self.num_bids + b];
            }
        }
        out
    }

    /// Mean window bid of a (bidder, type), or `None` if it never appeared.
    pub fn mean_bid(&self, bidder: usize, ty: usize, grid: &[f64]) -> Option<f64> {
        let counts = self.bid_counts(bidder, ty);
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return None;
        }
        let sum: f64 = counts.iter().zip(grid).map(|(&c, &b)| c as f64 * b).sum();
        Some(sum / n as f64)
    }

    /// Most frequent bid index of a (bidder, type); ties go to the lower bid.
    pub fn modal_bid(&self, bidder: usize, ty: usize) -> Option<usize> {
        let counts = self.bid_counts(bidder, ty);
        let best = counts.iter().copied().max()?;
        if best == 0 {
            return None;
        }
        counts.iter().position(|&c| c == best)
    }

    /// Adds another histogram of the same shape.
    pub fn merge(&mut self, other: &BidHistogram) -> Result<()> {
        if self.counts.len() != other.counts.len() || self.num_bids != other.num_bids {
            return Err(contract("histogram shapes differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Window periods in columnar form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub num_bidders: usize,
    pub periods: Vec<usize>,
    pub queries: Vec<u16>,
    /// Row-major `period x bidder`.
    pub types: Vec<u16>,
    /// Row-major `period x bidder`, flat action indices.
    pub actions: Vec<u32>,
    pub winners: Vec<Option<u16>>,
    pub prices: Vec<f64>,
}

impl Trace {
    pub fn new(num_bidders: usize) -> Self {
        Trace { num_bidders, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn types_at(&self, k: usize) -> &[u16] {
        &self.types[k * self.num_bidders..(k + 1) * self.num_bidders]
    }

    pub fn actions_at(&self, k: usize) -> &[u32] {
        &self.actions[k * self.num_bidders..(k + 1) * self.num_bidders]
    }

    pub fn push(
        &mut self,
        period: usize,
        query: u16,
        types: &[u16],
        actions: &[u32],
        winner: Option<u16>,
        price: f64,
    ) {
        self.periods.push(period);
        self.queries.push(query);
        self.types.extend_from_slice(types);
        self.actions.extend_from_slice(actions);
        self.winners.push(winner);
        self.prices.push(price);
    }
}

/// Metrics of one run over its measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run_seed: u64,
    /// Revenue per impression averaged over the window.
    pub mean_revenue: f64,
    pub window_len: usize,
    pub bid_histogram: BidHistogram,
    pub trace: Option<Trace>,
}

/// Runs sharing one environment sequence, with cross-run statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub runs: Vec<RunResult>,
    pub mean: f64,
    /// Population standard deviation (divide by the number of runs).
    pub std_dev: f64,
}

impl BatchResult {
    pub fn from_runs(runs: Vec<RunResult>) -> Self {
        let revenues: Vec<f64> = runs.iter().map(|r| r.mean_revenue).collect();
        let (mean, std_dev) = mean_and_population_std(&revenues);
        BatchResult { runs, mean, std_dev }
    }

    pub fn revenues(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.mean_revenue).collect()
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Deterministic per-run seeds drawn from a ChaCha8 stream on `master_seed`.
pub fn derive_run_seeds(master_seed: u64, num_runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..num_runs).map(|_| rng.next_u64()).collect()
}

/// Simulates all periods of `scenario` with learner randomness from `run_seed`.
pub fn run_simulation(
    scenario: &Scenario,
    env: &EnvSequence,
    run_seed: u64,
    options: RunOptions,
) -> Result<RunResult> {
    let horizon = scenario.horizon();
    let n = scenario.num_bidders();
    if env.len() != horizon || env.num_bidders() != n {
        return Err(contract("environment sequence does not match the scenario"));
    }
    let mechanism = *scenario.mechanism();
    let learner_spec = *scenario.learner();
    let grid = scenario.bid_grid();
    let clauses = scenario.clauses();
    let bidders = scenario.bidders();
    let (v_max, b_max) = (scenario.v_max(), scenario.b_max());
    let num_actions = scenario.num_actions();

    let mut learner = LearnerState::new(scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut histogram = BidHistogram::new(scenario);
    let mut trace = options.record_trace.then(|| Trace::new(n));

    let mut scratch = vec![0.0; num_actions];
    let mut per_bid = vec![0.0; grid.len()];
    let mut cf = vec![0.0; num_actions];
    let mut draws = vec![Draw { action: 0, prob: 1.0 }; n];
    let mut chosen = vec![0u32; n];
    let mut participants = vec![Participant { bid: 0.0, ctr: 0.0, eligible: false }; n];

    let window_start = horizon - scenario.window_len();
    let mut revenue_sum = 0.0;

    for t in 0..horizon {
        let q = env.query(t);
        let types = env.types(t);

        for i in 0..n {
            let ty = types[i] as usize;
            let draw = learner.sample(i, ty, &mut rng, &mut scratch);
            let action = scenario.action_at(draw.action);
            participants[i] = Participant {
                bid: grid[action.bid_index],
                ctr: bidders[i].ctr(ty, q),
                eligible: clauses[action.clause_index].contains(q),
            };
            draws[i] = draw;
            chosen[i] = draw.action as u32;
        }

        let outcome = resolve(&participants, &mechanism);
        let recorded = match outcome.tied_winners.len() {
            0 => None,
            1 => Some(outcome.tied_winners[0]),
            k => Some(outcome.tied_winners[rng.random_range(0..k)]),
        };

        match learner_spec {
            LearnerSpec::Hedge { raw_rewards, .. } => {
                for i in 0..n {
                    let ty = types[i] as usize;
                    fill_counterfactual(
                        scenario,
                        &participants,
                        &mechanism,
                        i,
                        q,
                        bidders[i].ctr(ty, q),
                        bidders[i].value(ty, q),
                        !raw_rewards,
                        &mut per_bid,
                        &mut cf,
                    );
                    learner.hedge_update(i, ty, &cf)?;
                }
            }
            LearnerSpec::Exp3Ix { .. } => {
                for i in 0..n {
                    let ty = types[i] as usize;
                    let eu = reward(
                        &outcome,
                        i,
                        bidders[i].ctr(ty, q),
                        bidders[i].value(ty, q),
                        n,
                        mechanism.tie_policy,
                    );
                    let r = normalize_reward(eu, v_max, b_max);
                    learner.exp3ix_update(i, ty, draws[i].action, r, draws[i].prob)?;
                }
            }
        }

        if t >= window_start {
            let revenue = match recorded {
                None => 0.0,
                Some(award) => {
                    let ctr = participants[award.bidder].ctr;
                    if options.realized_clicks {
                        if rng.random::<f64>() < ctr {
                            award.price_per_click
                        } else {
                            0.0
                        }
                    } else {
                        ctr * award.price_per_click
                    }
                }
            };
            revenue_sum += revenue;
            for i in 0..n {
                histogram.record(i, types[i] as usize, draws[i].action);
            }
            if let Some(trace) = trace.as_mut() {
                trace.push(
                    t,
                    q as u16,
                    types,
                    &chosen,
                    recorded.map(|a| a.bidder as u16),
                    recorded.map_or(0.0, |a| a.price_per_click),
                );
            }
        }
    }

    let window_len = horizon - window_start;
    Ok(RunResult {
        run_seed,
        mean_revenue: revenue_sum / window_len as f64,
        window_len,
        bid_histogram: histogram,
        trace,
    })
}

/// Runs every seed against a shared environment sequence, in parallel.
pub fn run_batch_with_env(
    scenario: &Scenario,
    env: &EnvSequence,
    run_seeds: &[u64],
    options: RunOptions,
) -> Result<BatchResult> {
    if run_seeds.is_empty() {
        return Err(contract("a batch needs at least one run"));
    }
    let runs = run_seeds
        .par_iter()
        .map(|&seed| run_simulation(scenario, env, seed, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchResult::from_runs(runs))
}

/// Samples the environment once and runs `num_runs` seeds derived from the
/// scenario's master seed.
pub fn run_batch(scenario: &Scenario, num_runs: usize, options: RunOptions) -> Result<BatchResult> {
    let env = sample_env_sequence(scenario);
    let seeds = derive_run_seeds(scenario.master_seed(), num_runs);
    run_batch_with_env(scenario, &env, &seeds, options)
}

/// Which floor a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    SoftFloor,
    HardReserve,
}

impl SweepParameter {
    pub fn rule(self, value: f64) -> PricingRule {
        match self {
            SweepParameter::SoftFloor => PricingRule::SoftFloor(value),
            SweepParameter::HardReserve => PricingRule::HardReserve(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub parameter: SweepParameter,
    pub value: f64,
    pub batch: BatchResult,
}

/// One batch per floor value; every point shares the environment sequence
/// and the run seeds.
pub fn sweep(
    template: &Scenario,
    parameter: SweepParameter,
    values: &[f64],
    num_runs: usize,
    options: RunOptions,
) -> Result<Vec<SweepPoint>> {
    let env = sample_env_sequence(template);
    let seeds = derive_run_seeds(template.master_seed(), num_runs);
    sweep_with_env(template, &env, &seeds, parameter, values, options)
}

pub fn sweep_with_env(
    template: &Scenario,
    env: &EnvSequence,
    seeds: &[u64],
    parameter: SweepParameter,
    values: &[f64],
    options: RunOptions,
) -> Result<Vec<SweepPoint>> {
    if seeds.is_empty() {
        return Err(contract("a sweep needs at least one run"));
    }
    let scenarios = values
        .iter()
        .map(|&v| template.modified(|c| c.mechanism.rule = parameter.rule(v)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..values.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let mut results = jobs
        .par_iter()
        .map(|&(p, seed)| run_simulation(&scenarios[p], env, seed, options))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    Ok(values
        .iter()
        .map(|&value| {
            let runs: Vec<RunResult> = results.by_ref().take(seeds.len()).collect();
            SweepPoint { parameter, value, batch: BatchResult::from_runs(runs) }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_bidder(rule: &str) -> Scenario {
        let text = format!(
            r#"
            id = "solo"
            query_dist = [1.0]
            bid_grid = {{ max = 1.0, steps = 10 }}
            horizon = 20000
            runs = 1
            [mechanism]
            rule = "{rule}"
            [[bidders]]
            type_dist = [1.0]
            values = [[1.0]]
            ctrs = [[1.0]]
            "#
        );
        Scenario::from_toml_str(&text).unwrap()
    }

    #[test]
    fn lone_first_price_bidder_learns_to_bid_zero() {
        let s = single_bidder("first_price");
        let batch = run_batch(&s, 1, RunOptions::default()).unwrap();
        let run = &batch.runs[0];
        assert_eq!(run.bid_histogram.modal_bid(0, 0), Some(0));
        assert!(run.mean_revenue <= 0.1);
        assert_eq!(batch.std_dev, 0.0);
        assert_eq!(batch.mean, run.mean_revenue);
    }

    #[test]
    fn histogram_counts_cover_window() {
        let s = single_bidder("second_price");
        let env = sample_env_sequence(&s);
        let run = run_simulation(&s, &env, 3, RunOptions { record_trace: true, ..Default::default() })
            .unwrap();
        assert_eq!(run.window_len, 2000);
        assert_eq!(run.bid_histogram.total(), 2000);
        assert_eq!(run.trace.as_ref().unwrap().len(), 2000);
    }

    #[test]
    fn runs_are_deterministic() {
        let s = single_bidder("first_price");
        let env = sample_env_sequence(&s);
        let a = run_simulation(&s, &env, 11, RunOptions::default()).unwrap();
        let b = run_simulation(&s, &env, 11, RunOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean_revenue.to_bits(), b.mean_revenue.to_bits());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_and_population_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn sweep_shares_environment_and_seeds() {
        let s = single_bidder("second_price");
        let pts = sweep(&s, SweepParameter::HardReserve, &[0.0, 0.5], 2, RunOptions::default())
            .unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].batch.runs[0].run_seed, pts[1].batch.runs[0].run_seed);
    }
}
