//! Auction environment: bidders, types, queries, values, click-through rates,
//! the discrete action grid, and the fixed per-period randomness shared by
//! every run of a scenario.
//!
//! Scenarios are written as TOML documents (see `ScenarioConfig`) and become a
//! [`Scenario`] only after [`Scenario::new`] has checked every invariant.
//! Matrices are row-major: bidder, then type, then query.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{LearnerConfig, LearnerSpec};
use crate::mechanisms::MechanismSpec;

/// Absolute tolerance on probability vectors summing to one.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Largest query count for which the "all subsets" clause space is allowed.
pub const MAX_QUERIES: usize = 16;

fn default_window_fraction() -> f64 {
    0.10
}

fn default_runs() -> usize {
    10
}

fn default_count() -> usize {
    1
}

/// Raw scenario document, as parsed from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    /// Query identifiers; defaults to a single query `q0`.
    #[serde(default)]
    pub queries: Vec<String>,
    pub query_dist: Vec<f64>,
    pub bid_grid: BidGridConfig,
    #[serde(default)]
    pub clauses: ClauseConfig,
    pub mechanism: MechanismSpec,
    #[serde(default)]
    pub learner: LearnerConfig,
    pub horizon: usize,
    #[serde(default = "default_window_fraction")]
    pub window_fraction: f64,
    #[serde(default)]
    pub env_seed: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub bidders: Vec<BidderConfig>,
}

/// Bid grid either listed explicitly or as `max * i / steps` for `i = 0..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BidGridConfig {
    Levels(Vec<f64>),
    Uniform { max: f64, steps: usize },
}

impl BidGridConfig {
    pub fn levels(&self) -> Vec<f64> {
        match self {
            BidGridConfig::Levels(levels) => levels.clone(),
            BidGridConfig::Uniform { max, steps } => {
                let steps = *steps;
                if steps == 0 {
                    return vec![*max];
                }
                (0..=steps).map(|i| max * i as f64 / steps as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseSet {
    /// Only the clause targeting every query.
    Full,
    /// Every subset of the query set, including the empty clause.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClauseConfig {
    Named(ClauseSet),
    /// Each clause given as a list of query indices.
    Explicit(Vec<Vec<usize>>),
}

impl Default for ClauseConfig {
    fn default() -> Self {
        ClauseConfig::Named(ClauseSet::Full)
    }
}

/// One bidder block; `count > 1` replicates it into symmetric bidders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidderConfig {
    #[serde(default = "default_count")]
    pub count: usize,
    /// Type identifiers; defaults to `t0, t1, ...`.
    #[serde(default)]
    pub types: Vec<String>,
    pub type_dist: Vec<f64>,
    /// `values[type][query]`, currency per click.
    pub values: Vec<Vec<f64>>,
    /// `ctrs[type][query]`, in `[0, 1]`.
    pub ctrs: Vec<Vec<f64>>,
}

/// A targeting clause as a bitmask over queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clause(pub u32);

impl Clause {
    #[inline]
    pub fn contains(self, query: usize) -> bool {
        self.0 >> query & 1 == 1
    }

    pub fn mask(self) -> u32 {
        self.0
    }
}

/// A validated bidder: type space, type distribution, value and CTR tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Bidder {
    pub types: Vec<String>,
    pub type_dist: Vec<f64>,
    values: Vec<f64>,
    ctrs: Vec<f64>,
    num_queries: usize,
}

impl Bidder {
    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    #[inline]
    pub fn value(&self, ty: usize, query: usize) -> f64 {
        self.values[ty * self.num_queries + query]
    }

    #[inline]
    pub fn ctr(&self, ty: usize, query: usize) -> f64 {
        self.ctrs[ty * self.num_queries + query]
    }
}

/// A bid/clause pair, addressed by indices into the bid grid and clause space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub clause_index: usize,
    pub bid_index: usize,
}

/// Validated, immutable description of one auction environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    config: ScenarioConfig,
    queries: Vec<String>,
    query_dist: Vec<f64>,
    bidders: Vec<Bidder>,
    bid_grid: Vec<f64>,
    clauses: Vec<Clause>,
    learner: LearnerSpec,
    v_max: f64,
    b_max: f64,
}

fn check_distribution(field: &str, dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::InvalidScenario(format!("{field} is empty")));
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::NegativeProbability { field: field.to_string() });
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::NotNormalized { field: field.to_string(), sum });
    }
    Ok(())
}

fn flatten_table(
    field: &str,
    rows: &[Vec<f64>],
    num_types: usize,
    num_queries: usize,
) -> Result<Vec<f64>> {
    if rows.len() != num_types || rows.iter().any(|r| r.len() != num_queries) {
        return Err(Error::InvalidScenario(format!(
            "{field} must be a {num_types}x{num_queries} table"
        )));
    }
    Ok(rows.iter().flatten().copied().collect())
}

impl Scenario {
    /// Validates a raw configuration and computes derived constants.
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let queries = if config.queries.is_empty() {
            (0..config.query_dist.len().max(1)).map(|q| format!("q{q}")).collect()
        } else {
            config.queries.clone()
        };
        let num_queries = queries.len();
        if num_queries > MAX_QUERIES {
            return Err(Error::InvalidScenario(format!(
                "at most {MAX_QUERIES} queries are supported"
            )));
        }
        if config.query_dist.len() != num_queries {
            return Err(Error::InvalidScenario(
                "query_dist length differs from the query count".into(),
            ));
        }
        check_distribution("query_dist", &config.query_dist)?;

        let bid_grid = config.bid_grid.levels();
        if bid_grid.is_empty() {
            return Err(Error::EmptyBidGrid);
        }
        if !bid_grid[0].is_finite() || bid_grid[0] < 0.0 {
            return Err(Error::NonIncreasingBidGrid { index: 0 });
        }
        for (index, pair) in bid_grid.windows(2).enumerate() {
            if !(pair[1] > pair[0]) || !pair[1].is_finite() {
                return Err(Error::NonIncreasingBidGrid { index: index + 1 });
            }
        }
        let b_max = *bid_grid.last().unwrap();
        if b_max <= 0.0 {
            return Err(Error::InvalidScenario("maximum bid must be positive".into()));
        }

        let full_mask = if num_queries == 32 { u32::MAX } else { (1u32 << num_queries) - 1 };
        let clauses = match &config.clauses {
            ClauseConfig::Named(ClauseSet::Full) => vec![Clause(full_mask)],
            ClauseConfig::Named(ClauseSet::All) => (0..=full_mask).map(Clause).collect(),
            ClauseConfig::Explicit(lists) => {
                let mut out = Vec::with_capacity(lists.len());
                for list in lists {
                    let mut mask = 0u32;
                    for &q in list {
                        if q >= num_queries {
                            return Err(Error::InvalidClause { clause: mask | 1u32 << q.min(31) });
                        }
                        mask |= 1 << q;
                    }
                    out.push(Clause(mask));
                }
                out
            }
        };
        if clauses.is_empty() {
            return Err(Error::EmptyClauseSpace);
        }

        let mut bidders = Vec::new();
        for (block, bc) in config.bidders.iter().enumerate() {
            if bc.count == 0 {
                return Err(Error::InvalidScenario(format!("bidders[{block}].count is zero")));
            }
            let num_types = bc.type_dist.len();
            if num_types == 0 || num_types > u16::MAX as usize {
                return Err(Error::InvalidScenario(format!(
                    "bidders[{block}] needs between 1 and 65535 types"
                )));
            }
            check_distribution(&format!("bidders[{block}].type_dist"), &bc.type_dist)?;
            let types = if bc.types.is_empty() {
                (0..num_types).map(|t| format!("t{t}")).collect()
            } else if bc.types.len() == num_types {
                bc.types.clone()
            } else {
                return Err(Error::InvalidScenario(format!(
                    "bidders[{block}].types length differs from type_dist"
                )));
            };
            let values =
                flatten_table(&format!("bidders[{block}].values"), &bc.values, num_types, num_queries)?;
            let ctrs =
                flatten_table(&format!("bidders[{block}].ctrs"), &bc.ctrs, num_types, num_queries)?;
            if let Some(&value) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::NegativeValue { field: format!("bidders[{block}].values"), value });
            }
            if let Some(&value) = ctrs.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(Error::CtrOutOfRange { field: format!("bidders[{block}].ctrs"), value });
            }
            for _ in 0..bc.count {
                bidders.push(Bidder {
                    types: types.clone(),
                    type_dist: bc.type_dist.clone(),
                    values: values.clone(),
                    ctrs: ctrs.clone(),
                    num_queries,
                });
            }
        }
        if bidders.is_empty() {
            return Err(Error::InvalidScenario("at least one bidder is required".into()));
        }

        if config.horizon == 0 {
            return Err(Error::InvalidScenario("horizon must be positive".into()));
        }
        if !(config.window_fraction > 0.0 && config.window_fraction <= 1.0) {
            return Err(Error::InvalidScenario("window_fraction must lie in (0, 1]".into()));
        }
        if config.runs == 0 {
            return Err(Error::InvalidScenario("runs must be at least 1".into()));
        }
        config.mechanism.validate()?;

        let v_max = bidders
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .fold(0.0_f64, f64::max);

        let num_actions = bid_grid.len() * clauses.len();
        let learner = config.learner.resolve(num_actions, config.horizon)?;

        Ok(Scenario {
            queries,
            query_dist: config.query_dist.clone(),
            bidders,
            bid_grid,
            clauses,
            learner,
            v_max,
            b_max,
            config,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Scenario::new(config)
    }

    /// The raw configuration this scenario was built from.
    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    /// Rebuilds the scenario after editing a copy of its configuration.
    pub fn modified(&self, edit: impl FnOnce(&mut ScenarioConfig)) -> Result<Scenario> {
        let mut config = self.config.clone();
        edit(&mut config);
        Scenario::new(config)
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }
    pub fn queries(&self) -> &[String] {
        &self.queries
    }
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }
    pub fn query_dist(&self) -> &[f64] {
        &self.query_dist
    }
    pub fn bidders(&self) -> &[Bidder] {
        &self.bidders
    }
    pub fn num_bidders(&self) -> usize {
        self.bidders.len()
    }
    pub fn bid_grid(&self) -> &[f64] {
        &self.bid_grid
    }
    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }
    pub fn mechanism(&self) -> &MechanismSpec {
        &self.config.mechanism
    }
    pub fn learner(&self) -> &LearnerSpec {
        &self.learner
    }
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }
    pub fn window_fraction(&self) -> f64 {
        self.config.window_fraction
    }
    pub fn env_seed(&self) -> u64 {
        self.config.env_seed
    }
    pub fn master_seed(&self) -> u64 {
        self.config.master_seed
    }
    pub fn runs(&self) -> usize {
        self.config.runs
    }
    pub fn v_max(&self) -> f64 {
        self.v_max
    }
    pub fn b_max(&self) -> f64 {
        self.b_max
    }

    /// Number of trailing periods used for measurement (at least one).
    pub fn window_len(&self) -> usize {
        let len = (self.horizon() as f64 * self.window_fraction()).round() as usize;
        len.clamp(1, self.horizon())
    }

    pub fn num_actions(&self) -> usize {
        self.bid_grid.len() * self.clauses.len()
    }

    /// Flat index of an action: clause-major, then bid.
    #[inline]
    pub fn action_index(&self, action: Action) -> usize {
        action.clause_index * self.bid_grid.len() + action.bid_index
    }

    #[inline]
    pub fn action_at(&self, index: usize) -> Action {
        let nb = self.bid_grid.len();
        Action { clause_index: index / nb, bid_index: index % nb }
    }
}

/// Every action in the fixed clause-major, bid-minor order.
pub fn action_space(scenario: &Scenario) -> Vec<Action> {
    (0..scenario.clauses().len())
        .flat_map(|clause_index| {
            (0..scenario.bid_grid().len()).map(move |bid_index| Action { clause_index, bid_index })
        })
        .collect()
}

/// Inverse-CDF sampler over a finite support.
#[derive(Debug, Clone)]
pub struct Categorical {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    pub fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        Categorical { cdf, last_positive }
    }

    /// Maps a uniform draw in `[0, 1)` to an outcome index.
    #[inline]
    pub fn index_for(&self, u: f64) -> usize {
        let k = self.cdf.partition_point(|c| *c <= u);
        k.min(self.last_positive)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index_for(rng.random::<f64>())
    }
}

/// Realized queries and types for every period of a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSequence {
    num_bidders: usize,
    queries: Vec<u16>,
    types: Vec<u16>,
}

impl EnvSequence {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn num_bidders(&self) -> usize {
        self.num_bidders
    }

    #[inline]
    pub fn query(&self, t: usize) -> usize {
        self.queries[t] as usize
    }

    /// Types of all bidders in period `t`.
    #[inline]
    pub fn types(&self, t: usize) -> &[u16] {
        &self.types[t * self.num_bidders..(t + 1) * self.num_bidders]
    }

    pub fn query_counts(&self, num_queries: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_queries];
        for &q in &self.queries {
            counts[q as usize] += 1;
        }
        counts
    }

    pub fn type_counts(&self, bidder: usize, num_types: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_types];
        for t in 0..self.len() {
            counts[self.types(t)[bidder] as usize] += 1;
        }
        counts
    }
}

/// Draws the query and type sequence from `env_seed` with ChaCha8.
///
/// Per period the generator yields the query first, then one type per bidder
/// in bidder order. Equal scenarios and seeds give identical sequences.
pub fn sample_env_sequence(scenario: &Scenario) -> EnvSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.env_seed());
    let query_sampler = Categorical::new(scenario.query_dist());
    let type_samplers: Vec<Categorical> =
        scenario.bidders().iter().map(|b| Categorical::new(&b.type_dist)).collect();
    let horizon = scenario.horizon();
    let n = scenario.num_bidders();
    let mut queries = Vec::with_capacity(horizon);
    let mut types = Vec::with_capacity(horizon * n);
    for _ in 0..horizon {
        queries.push(query_sampler.sample(&mut rng) as u16);
        for sampler in &type_samplers {
            types.push(sampler.sample(&mut rng) as u16);
        }
    }
    EnvSequence { num_bidders: n, queries, types }
}
