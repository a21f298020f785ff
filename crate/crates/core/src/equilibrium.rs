//! Empirical coarse Bayes correlated equilibrium checks.
//!
//! A profile is a weighted set of joint (type vector, action vector) samples,
//! usually the window periods of a simulation trace. For every bidder, type
//! and fixed action the checker measures how much the bidder would have
//! gained by always playing that action whenever the type was realized,
//! holding every opponent's realized action fixed. Utilities are exact
//! expectations over the query distribution.

use rayon::prelude::*;

use crate::env::{Action, Scenario};
use crate::error::{contract, Error, Result};
use crate::mechanisms::{fill_counterfactual, resolve, reward, Opponents, Participant};
use crate::simulator::Trace;

/// Largest action space the checker enumerates by default.
pub const DEFAULT_ACTION_CAP: usize = 4096;

/// Weighted joint samples of realized types and actions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProfile {
    num_bidders: usize,
    /// Row-major `sample x bidder`.
    types: Vec<u16>,
    /// Row-major `sample x bidder`, flat action indices.
    actions: Vec<u32>,
    weights: Vec<f64>,
}

impl EmpiricalProfile {
    /// Every window period of `trace` as one equally weighted sample.
    pub fn from_trace(trace: &Trace) -> Result<Self> {
        if trace.is_empty() {
            return Err(Error::EmptySamples);
        }
        let w = 1.0 / trace.len() as f64;
        Ok(EmpiricalProfile {
            num_bidders: trace.num_bidders,
            types: trace.types.clone(),
            actions: trace.actions.clone(),
            weights: vec![w; trace.len()],
        })
    }

    /// Builds a profile from explicit samples; weights are renormalized.
    pub fn from_samples(
        scenario: &Scenario,
        samples: &[(Vec<u16>, Vec<Action>, f64)],
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let n = scenario.num_bidders();
        let mut profile = EmpiricalProfile {
            num_bidders: n,
            types: Vec::with_capacity(samples.len() * n),
            actions: Vec::with_capacity(samples.len() * n),
            weights: Vec::with_capacity(samples.len()),
        };
        for (types, actions, weight) in samples {
            if types.len() != n || actions.len() != n {
                return Err(contract(format!("sample needs {n} types and {n} actions")));
            }
            if !(*weight >= 0.0) || !weight.is_finite() {
                return Err(contract(format!("invalid sample weight {weight}")));
            }
            for (i, (&ty, &a)) in types.iter().zip(actions).enumerate() {
                if ty as usize >= scenario.bidders()[i].num_types()
                    || a.bid_index >= scenario.bid_grid().len()
                    || a.clause_index >= scenario.clauses().len()
                {
                    return Err(contract(format!("sample entry for bidder {i} out of range")));
                }
            }
            profile.types.extend_from_slice(types);
            profile.actions.extend(actions.iter().map(|&a| scenario.action_index(a) as u32));
            profile.weights.push(*weight);
        }
        let total: f64 = profile.weights.iter().sum();
        if !(total > 0.0) {
            return Err(contract("sample weights sum to zero"));
        }
        profile.weights.iter_mut().for_each(|w| *w /= total);
        Ok(profile)
    }

    /// Pure-strategy profile: every joint type vector weighted by its prior
    /// probability, each type playing `strategy(bidder, type)`.
    pub fn from_strategy(
        scenario: &Scenario,
        strategy: impl Fn(usize, usize) -> Action,
    ) -> Result<Self> {
        let dims: Vec<usize> = scenario.bidders().iter().map(|b| b.num_types()).collect();
        let total: usize = dims.iter().product();
        if total > 1 << 20 {
            return Err(contract("too many joint type vectors to enumerate"));
        }
        let mut samples = Vec::with_capacity(total);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..total {
            let mut weight = 1.0;
            for (i, &ty) in idx.iter().enumerate() {
                weight *= scenario.bidders()[i].type_dist[ty];
            }
            if weight > 0.0 {
                let types: Vec<u16> = idx.iter().map(|&t| t as u16).collect();
                let actions: Vec<Action> = idx.iter().enumerate().map(|(i, &t)| strategy(i, t)).collect();
                samples.push((types, actions, weight));
            }
            for (slot, &d) in idx.iter_mut().zip(&dims) {
                *slot += 1;
                if *slot < d {
                    break;
                }
                *slot = 0;
            }
        }
        Self::from_samples(scenario, &samples)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn num_bidders(&self) -> usize {
        self.num_bidders
    }

    fn types_at(&self, k: usize) -> &[u16] {
        &self.types[k * self.num_bidders..(k + 1) * self.num_bidders]
    }

    fn actions_at(&self, k: usize) -> &[u32] {
        &self.actions[k * self.num_bidders..(k + 1) * self.num_bidders]
    }
}

/// Best fixed deviation for one (bidder, type).
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationGain {
    pub bidder: usize,
    pub ty: usize,
    /// False when the type never appears in the profile; the remaining
    /// fields are then meaningless and the entry is ignored by epsilon.
    pub realized: bool,
    pub best_action: Action,
    /// Expected utility gain of the best deviation, conditional on the type.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceReport {
    pub gains: Vec<DeviationGain>,
    /// Largest gain floored at zero.
    pub epsilon: f64,
    /// Largest gain without the floor.
    pub raw_max_gain: f64,
}

impl BceReport {
    /// (bidder, type) pairs that never occurred in the profile.
    pub fn unrealized(&self) -> Vec<(usize, usize)> {
        self.gains.iter().filter(|g| !g.realized).map(|g| (g.bidder, g.ty)).collect()
    }
}

/// Coarse BCE epsilon with the default action cap.
pub fn coarse_bce_epsilon(profile: &EmpiricalProfile, scenario: &Scenario) -> Result<BceReport> {
    coarse_bce_epsilon_with_cap(profile, scenario, DEFAULT_ACTION_CAP)
}

pub fn coarse_bce_epsilon_with_cap(
    profile: &EmpiricalProfile,
    scenario: &Scenario,
    action_cap: usize,
) -> Result<BceReport> {
    if profile.is_empty() {
        return Err(Error::EmptySamples);
    }
    if profile.num_bidders != scenario.num_bidders() {
        return Err(contract("profile and scenario disagree on the number of bidders"));
    }
    let num_actions = scenario.num_actions();
    if num_actions > action_cap {
        return Err(contract(format!("{num_actions} actions exceed the cap of {action_cap}")));
    }
    if profile.actions.iter().any(|&a| a as usize >= num_actions) {
        return Err(contract("profile action outside the action space"));
    }
    for k in 0..profile.len() {
        for (i, &ty) in profile.types_at(k).iter().enumerate() {
            if ty as usize >= scenario.bidders()[i].num_types() {
                return Err(contract(format!("profile type {ty} out of range for bidder {i}")));
            }
        }
    }

    let jobs: Vec<(usize, usize)> = scenario
        .bidders()
        .iter()
        .enumerate()
        .flat_map(|(i, b)| (0..b.num_types()).map(move |t| (i, t)))
        .collect();
    let gains: Vec<DeviationGain> =
        jobs.par_iter().map(|&(i, ty)| best_deviation(profile, scenario, i, ty)).collect();

    let raw_max_gain = gains
        .iter()
        .filter(|g| g.realized)
        .map(|g| g.gain)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BceReport { gains, epsilon: raw_max_gain.max(0.0), raw_max_gain })
}

fn best_deviation(profile: &EmpiricalProfile, scenario: &Scenario, bidder: usize, ty: usize) -> DeviationGain {
    let mechanism = scenario.mechanism();
    let n = scenario.num_bidders();
    let grid = scenario.bid_grid();
    let clauses = scenario.clauses();
    let nb = grid.len();
    let query_dist = scenario.query_dist();

    let mut gain = vec![0.0; scenario.num_actions()];
    let mut per_bid = vec![0.0; nb];
    let mut participants = vec![Participant { bid: 0.0, ctr: 0.0, eligible: false }; n];
    let mut mass = 0.0;

    for k in 0..profile.len() {
        let types = profile.types_at(k);
        if types[bidder] as usize != ty {
            continue;
        }
        let w = profile.weights[k];
        mass += w;
        let actions = profile.actions_at(k);
        for (q, &fq) in query_dist.iter().enumerate() {
            if fq == 0.0 {
                continue;
            }
            for j in 0..n {
                let a = scenario.action_at(actions[j] as usize);
                participants[j] = Participant {
                    bid: grid[a.bid_index],
                    ctr: scenario.bidders()[j].ctr(types[j] as usize, q),
                    eligible: clauses[a.clause_index].contains(q),
                };
            }
            let ctr = participants[bidder].ctr;
            let value = scenario.bidders()[bidder].value(ty, q);
            let outcome = resolve(&participants, mechanism);
            let realized = reward(&outcome, bidder, ctr, value, n, mechanism.tie_policy);
            let opponents = Opponents::new(&participants, bidder, mechanism);
            for (slot, &bid) in per_bid.iter_mut().zip(grid) {
                *slot = opponents.utility(bid, ctr, value, mechanism, n);
            }
            let scale = w * fq;
            for (c, clause) in clauses.iter().enumerate() {
                let dst = &mut gain[c * nb..(c + 1) * nb];
                if clause.contains(q) {
                    for (g, &u) in dst.iter_mut().zip(per_bid.iter()) {
                        *g += scale * (u - realized);
                    }
                } else {
                    for g in dst.iter_mut() {
                        *g -= scale * realized;
                    }
                }
            }
        }
    }

    if mass == 0.0 {
        return DeviationGain {
            bidder,
            ty,
            realized: false,
            best_action: Action { clause_index: 0, bid_index: 0 },
            gain: 0.0,
        };
    }
    let (best, &g) = gain
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (a, g)| if *g > *acc.1 { (a, g) } else { acc });
    DeviationGain { bidder, ty, realized: true, best_action: scenario.action_at(best), gain: g / mass }
}

/// External regret of one (bidder, type)'s realized actions against the best
/// fixed action in hindsight, in normalized reward per 1000 occurrences of
/// the type. Zero when the type never occurs.
pub fn realized_regret(
    trace: Option<&Trace>,
    scenario: &Scenario,
    bidder: usize,
    ty: usize,
) -> Result<f64> {
    let trace = trace.ok_or(Error::TraceDisabled)?;
    if trace.num_bidders != scenario.num_bidders() {
        return Err(contract("trace and scenario disagree on the number of bidders"));
    }
    if bidder >= scenario.num_bidders() || ty >= scenario.bidders()[bidder].num_types() {
        return Err(contract(format!("bidder {bidder} type {ty} out of range")));
    }
    let n = scenario.num_bidders();
    let grid = scenario.bid_grid();
    let clauses = scenario.clauses();
    let mechanism = scenario.mechanism();
    let num_actions = scenario.num_actions();

    let mut totals = vec![0.0; num_actions];
    let mut cf = vec![0.0; num_actions];
    let mut per_bid = vec![0.0; grid.len()];
    let mut participants = vec![Participant { bid: 0.0, ctr: 0.0, eligible: false }; n];
    let mut realized_total = 0.0;
    let mut occurrences = 0usize;

    for k in 0..trace.len() {
        let types = trace.types_at(k);
        if types[bidder] as usize != ty {
            continue;
        }
        occurrences += 1;
        let q = trace.queries[k] as usize;
        let actions = trace.actions_at(k);
        for j in 0..n {
            let a = scenario.action_at(actions[j] as usize);
            participants[j] = Participant {
                bid: grid[a.bid_index],
                ctr: scenario.bidders()[j].ctr(types[j] as usize, q),
                eligible: clauses[a.clause_index].contains(q),
            };
        }
        fill_counterfactual(
            scenario,
            &participants,
            mechanism,
            bidder,
            q,
            participants[bidder].ctr,
            scenario.bidders()[bidder].value(ty, q),
            true,
            &mut per_bid,
            &mut cf,
        );
        for (t, &r) in totals.iter_mut().zip(&cf) {
            *t += r;
        }
        realized_total += cf[actions[bidder] as usize];
    }
    if occurrences == 0 {
        return Ok(0.0);
    }
    let best = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((best - realized_total) * 1000.0 / occurrences as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_query(n: usize, rule: &str, values: &[f64]) -> Scenario {
        let k = values.len();
        let text = format!(
            r#"
            id = "t"
            query_dist = [1.0]
            bid_grid = {{ max = 1.0, steps = 2 }}
            horizon = 10
            env_seed = 1
            master_seed = 2
            [mechanism]
            rule = "{rule}"
            [[bidders]]
            count = {n}
            type_dist = {dist:?}
            values = {vals:?}
            ctrs = {ctrs:?}
            "#,
            dist = vec![1.0 / k as f64; k],
            vals = values.iter().map(|&v| vec![v]).collect::<Vec<_>>(),
            ctrs = vec![vec![1.0]; k],
        );
        Scenario::from_toml_str(&text).unwrap()
    }

    #[test]
    fn truthful_second_price_has_zero_epsilon() {
        let s = single_query(2, "second_price", &[0.0, 0.5, 1.0]);
        let profile =
            EmpiricalProfile::from_strategy(&s, |_, t| Action { clause_index: 0, bid_index: t }).unwrap();
        let report = coarse_bce_epsilon(&profile, &s).unwrap();
        assert_eq!(report.epsilon, 0.0);
        assert!(report.unrealized().is_empty());
    }

    #[test]
    fn lone_first_price_bidder_gains_by_bidding_zero() {
        let s = single_query(1, "first_price", &[1.0]);
        let profile =
            EmpiricalProfile::from_strategy(&s, |_, _| Action { clause_index: 0, bid_index: 2 }).unwrap();
        let report = coarse_bce_epsilon(&profile, &s).unwrap();
        assert_eq!(report.raw_max_gain, 1.0);
        assert_eq!(report.gains[0].best_action.bid_index, 0);
    }

    #[test]
    fn regret_needs_a_trace() {
        let s = single_query(1, "first_price", &[1.0]);
        assert_eq!(realized_regret(None, &s, 0, 0), Err(Error::TraceDisabled));
    }
}
