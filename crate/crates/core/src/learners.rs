//! Hedge (full-information exponential weights) and EXP3-IX (bandit feedback
//! with implicit exploration), one independent table per (bidder, type).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Scenario;
use crate::error::{contract, Error, Result};

/// Hedge temperature used when none is configured.
pub const DEFAULT_HEDGE_ETA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Hedge,
    #[serde(rename = "exp3ix")]
    Exp3Ix,
}

/// Learner section of a scenario document. EXP3-IX parameters left unset
/// are tuned from the action count and horizon.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Feed Hedge raw expected utility instead of the normalized reward.
    #[serde(default)]
    pub raw_rewards: bool,
}

impl LearnerConfig {
    pub fn resolve(&self, num_actions: usize, horizon: usize) -> Result<LearnerSpec> {
        let spec = match self.algorithm {
            Algorithm::Hedge => {
                if self.gamma.is_some() {
                    return Err(Error::InvalidScenario("gamma applies to exp3ix only".into()));
                }
                LearnerSpec::Hedge {
                    eta: self.eta.unwrap_or(DEFAULT_HEDGE_ETA),
                    raw_rewards: self.raw_rewards,
                }
            }
            Algorithm::Exp3Ix => {
                if self.raw_rewards {
                    return Err(Error::InvalidScenario("exp3ix requires normalized rewards".into()));
                }
                let (eta, gamma) = match (self.eta, self.gamma) {
                    (Some(eta), Some(gamma)) => (eta, gamma),
                    (eta, gamma) => {
                        let (tuned_eta, tuned_gamma) = exp3ix_tuning(num_actions.max(2), horizon)?;
                        (eta.unwrap_or(tuned_eta), gamma.unwrap_or(tuned_gamma))
                    }
                };
                LearnerSpec::Exp3Ix { eta, gamma }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Resolved learner hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnerSpec {
    Hedge { eta: f64, raw_rewards: bool },
    Exp3Ix { eta: f64, gamma: f64 },
}

impl LearnerSpec {
    pub fn eta(&self) -> f64 {
        match *self {
            LearnerSpec::Hedge { eta, .. } | LearnerSpec::Exp3Ix { eta, .. } => eta,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            LearnerSpec::Exp3Ix { gamma, .. } => Some(gamma),
            LearnerSpec::Hedge { .. } => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Hedge { .. } => "hedge",
            LearnerSpec::Exp3Ix { .. } => "exp3ix",
        }
    }

    fn validate(&self) -> Result<()> {
        let eta = self.eta();
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidScenario(format!("eta must be positive, got {eta}")));
        }
        if let Some(gamma) = self.gamma() {
            if !(gamma.is_finite() && gamma >= 0.0) {
                return Err(Error::InvalidScenario(format!("gamma must be >= 0, got {gamma}")));
            }
        }
        Ok(())
    }
}

/// Implicit-exploration and learning rates for `k` arms over `t` rounds:
/// `gamma = sqrt(2 ln(k + 1) / (k t))`, `eta = 2 gamma`.
pub fn exp3ix_tuning(k: usize, t: usize) -> Result<(f64, f64)> {
    if k < 2 || t < 1 {
        return Err(contract(format!("exp3ix tuning needs k >= 2 and t >= 1, got k={k}, t={t}")));
    }
    let kf = k as f64;
    let gamma = (2.0 * (kf + 1.0).ln() / (kf * t as f64)).sqrt();
    Ok((2.0 * gamma, gamma))
}

/// Writes unnormalized softmax weights `exp((x - max x) * scale)` into `out`
/// and returns their sum. The largest entry is exactly 1.
#[inline]
fn stable_exp_into(logits: &[f64], scale: f64, out: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        let e = ((x - max) * scale).exp();
        *o = e;
        total += e;
    }
    total
}

#[inline]
fn stable_exp_neg_into(losses: &[f64], scale: f64, out: &mut [f64]) -> f64 {
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(losses) {
        let e = ((min - x) * scale).exp();
        *o = e;
        total += e;
    }
    total
}

/// `p(a) ∝ exp(w(a) / eta)`, stabilized by subtracting the largest weight.
pub fn hedge_distribution(weights: &[f64], eta: f64) -> Vec<f64> {
    let mut out = vec![0.0; weights.len()];
    let total = stable_exp_into(weights, 1.0 / eta, &mut out);
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// `p(a) ∝ exp(-eta * l(a))`, stabilized by subtracting the smallest loss.
pub fn exp3ix_distribution(losses: &[f64], eta: f64) -> Vec<f64> {
    let mut out = vec![0.0; losses.len()];
    let total = stable_exp_neg_into(losses, eta, &mut out);
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Draws an index from unnormalized weights by inverse CDF.
#[inline]
fn sample_weighted(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    // rounding left `acc` at or below `target`; fall back to the last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// A sampled action together with the probability it had.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub action: usize,
    pub prob: f64,
}

/// Per-(bidder, type) weight or loss tables for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    spec: LearnerSpec,
    num_actions: usize,
    /// Row offset of each bidder's first type.
    offsets: Vec<usize>,
    num_types: Vec<usize>,
    tables: Vec<f64>,
}

impl LearnerState {
    /// Zero-initialized tables for every bidder and type of the scenario.
    pub fn new(scenario: &Scenario) -> Self {
        let num_types: Vec<usize> = scenario.bidders().iter().map(|b| b.num_types()).collect();
        Self::with_dims(*scenario.learner(), scenario.num_actions(), &num_types)
    }

    pub fn with_dims(spec: LearnerSpec, num_actions: usize, num_types: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(num_types.len());
        let mut rows = 0;
        for &k in num_types {
            offsets.push(rows);
            rows += k;
        }
        LearnerState {
            spec,
            num_actions,
            offsets,
            num_types: num_types.to_vec(),
            tables: vec![0.0; rows * num_actions],
        }
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    fn row(&self, bidder: usize, ty: usize) -> std::ops::Range<usize> {
        debug_assert!(ty < self.num_types[bidder]);
        let start = (self.offsets[bidder] + ty) * self.num_actions;
        start..start + self.num_actions
    }

    /// Cumulative rewards (Hedge) or cumulative loss estimates (EXP3-IX).
    pub fn table(&self, bidder: usize, ty: usize) -> &[f64] {
        &self.tables[self.row(bidder, ty)]
    }

    /// Current sampling distribution of a (bidder, type).
    pub fn distribution(&self, bidder: usize, ty: usize) -> Vec<f64> {
        let table = self.table(bidder, ty);
        match self.spec {
            LearnerSpec::Hedge { eta, .. } => hedge_distribution(table, eta),
            LearnerSpec::Exp3Ix { eta, .. } => exp3ix_distribution(table, eta),
        }
    }

    /// Samples an action for a (bidder, type); `scratch` must hold one slot per action.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        bidder: usize,
        ty: usize,
        rng: &mut R,
        scratch: &mut [f64],
    ) -> Draw {
        let table = &self.tables[self.row(bidder, ty)];
        let total = match self.spec {
            LearnerSpec::Hedge { eta, .. } => stable_exp_into(table, 1.0 / eta, scratch),
            LearnerSpec::Exp3Ix { eta, .. } => stable_exp_neg_into(table, eta, scratch),
        };
        let u: f64 = rng.random();
        let action = sample_weighted(scratch, total, u);
        Draw { action, prob: scratch[action] / total }
    }

    /// Adds a full reward vector to the realized type's Hedge weights.
    pub fn hedge_update(&mut self, bidder: usize, ty: usize, rewards: &[f64]) -> Result<()> {
        let LearnerSpec::Hedge { raw_rewards, .. } = self.spec else {
            return Err(contract("hedge_update on an EXP3-IX learner"));
        };
        if rewards.len() != self.num_actions {
            return Err(contract(format!(
                "reward vector has {} entries, expected {}",
                rewards.len(),
                self.num_actions
            )));
        }
        if !raw_rewards {
            if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(contract(format!("normalized reward {r} outside [0, 1]")));
            }
        }
        let range = self.row(bidder, ty);
        for (w, r) in self.tables[range].iter_mut().zip(rewards) {
            *w += r;
        }
        Ok(())
    }

    /// Charges the chosen action `(1 - r) / (p + gamma)`.
    pub fn exp3ix_update(
        &mut self,
        bidder: usize,
        ty: usize,
        action: usize,
        reward: f64,
        prob: f64,
    ) -> Result<()> {
        let LearnerSpec::Exp3Ix { gamma, .. } = self.spec else {
            return Err(contract("exp3ix_update on a Hedge learner"));
        };
        if !(0.0..=1.0).contains(&reward) {
            return Err(contract(format!("normalized reward {reward} outside [0, 1]")));
        }
        if !(prob > 0.0 && prob <= 1.0) {
            return Err(contract(format!("probability of chosen action must be in (0, 1], got {prob}")));
        }
        if action >= self.num_actions {
            return Err(contract(format!("action {action} out of range")));
        }
        let start = self.row(bidder, ty).start;
        self.tables[start + action] += (1.0 - reward) / (prob + gamma);
        Ok(())
    }
}
