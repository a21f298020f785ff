//! Single-slot pricing rules, per-bidder rewards, reward normalization and
//! the counterfactual reward sweep used by full-information learners.
//!
//! Winners are ranked by score (`bid * ctr`). Prices are computed from a pair
//! `(b1, b2)`: the winner's own bid and the runner-up's competing per-click
//! price. With [`PriceSpace::Bid`] the runner-up price is the per-click bid of
//! the highest-score competitor (capped at the winner's bid); with
//! [`PriceSpace::Score`] it is the runner-up score divided by the winner's CTR.
//! Both reduce to the textbook rules when all CTRs are equal.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::env::{Action, Scenario};
use crate::error::{contract, Error, Result};

/// Pricing rule for the single slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PricingRule {
    FirstPrice,
    SecondPrice,
    /// Unsold when the winning bid is below the reserve; otherwise the
    /// reserve acts as price support.
    HardReserve(f64),
    /// Reserve-like between the top two bids, first-price below both.
    SoftFloor(f64),
}

impl PricingRule {
    /// Price per click for a winner bidding `b1` against a competing price
    /// `b2`, or `None` when the slot goes unsold.
    #[inline]
    pub fn price(self, b1: f64, b2: Option<f64>) -> Option<f64> {
        let second = b2.unwrap_or(0.0);
        match self {
            PricingRule::FirstPrice => Some(b1),
            PricingRule::SecondPrice => Some(second),
            PricingRule::HardReserve(r) => {
                if b1 < r {
                    None
                } else {
                    Some(second.max(r))
                }
            }
            PricingRule::SoftFloor(s) => {
                if second >= s {
                    Some(second)
                } else if b1 >= s {
                    Some(s)
                } else {
                    Some(b1)
                }
            }
        }
    }

    pub fn floor(self) -> Option<f64> {
        match self {
            PricingRule::HardReserve(f) | PricingRule::SoftFloor(f) => Some(f),
            _ => None,
        }
    }

    /// Short label used in CSV output: `first`, `second`, `reserve`, `soft`.
    pub fn kind(self) -> &'static str {
        match self {
            PricingRule::FirstPrice => "first",
            PricingRule::SecondPrice => "second",
            PricingRule::HardReserve(_) => "reserve",
            PricingRule::SoftFloor(_) => "soft",
        }
    }
}

impl fmt::Display for PricingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.floor() {
            Some(x) => write!(f, "{}:{}", self.kind(), x),
            None => f.write_str(self.kind()),
        }
    }
}

impl FromStr for PricingRule {
    type Err = Error;

    /// Parses `first`, `second`, `reserve:R` or `soft:S`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let floor = |arg: Option<&str>| -> Result<f64> {
            let text = arg.ok_or_else(|| Error::Parse(format!("mechanism '{s}' needs a floor")))?;
            text.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("invalid floor in mechanism '{s}'")))
        };
        let rule = match (kind.trim(), arg) {
            ("first", None) => PricingRule::FirstPrice,
            ("second", None) => PricingRule::SecondPrice,
            ("reserve", a) => PricingRule::HardReserve(floor(a)?),
            ("soft", a) => PricingRule::SoftFloor(floor(a)?),
            _ => return Err(Error::Parse(format!("unknown mechanism '{s}'"))),
        };
        Ok(rule)
    }
}

/// How a tied winner's surplus is divided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Divide by the number of bidders in the auction.
    #[default]
    DivideByN,
    /// Divide by the number of tied winners.
    DivideByTied,
}

/// Units in which the runner-up sets the price under unequal CTRs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceSpace {
    #[default]
    Bid,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RuleKind {
    FirstPrice,
    SecondPrice,
    HardReserve,
    SoftFloor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMechanism {
    rule: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    floor: Option<f64>,
    #[serde(default)]
    tie_policy: TiePolicy,
    #[serde(default)]
    price_space: PriceSpace,
}

/// Full mechanism configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMechanism", into = "RawMechanism")]
pub struct MechanismSpec {
    pub rule: PricingRule,
    pub tie_policy: TiePolicy,
    pub price_space: PriceSpace,
}

impl MechanismSpec {
    pub fn new(rule: PricingRule) -> Self {
        MechanismSpec { rule, tie_policy: TiePolicy::default(), price_space: PriceSpace::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.rule.floor() {
            Some(f) if !(f.is_finite() && f >= 0.0) => {
                Err(Error::InvalidScenario(format!("floor must be finite and >= 0, got {f}")))
            }
            _ => Ok(()),
        }
    }
}

impl TryFrom<RawMechanism> for MechanismSpec {
    type Error = String;

    fn try_from(raw: RawMechanism) -> std::result::Result<Self, String> {
        let rule = match (raw.rule, raw.floor) {
            (RuleKind::FirstPrice, None) => PricingRule::FirstPrice,
            (RuleKind::SecondPrice, None) => PricingRule::SecondPrice,
            (RuleKind::HardReserve, Some(f)) => PricingRule::HardReserve(f),
            (RuleKind::SoftFloor, Some(f)) => PricingRule::SoftFloor(f),
            (RuleKind::FirstPrice | RuleKind::SecondPrice, Some(_)) => {
                return Err("floor is only allowed for hard_reserve and soft_floor".into())
            }
            (_, None) => return Err("hard_reserve and soft_floor require a floor".into()),
        };
        Ok(MechanismSpec { rule, tie_policy: raw.tie_policy, price_space: raw.price_space })
    }
}

impl From<MechanismSpec> for RawMechanism {
    fn from(m: MechanismSpec) -> Self {
        let rule = match m.rule {
            PricingRule::FirstPrice => RuleKind::FirstPrice,
            PricingRule::SecondPrice => RuleKind::SecondPrice,
            PricingRule::HardReserve(_) => RuleKind::HardReserve,
            PricingRule::SoftFloor(_) => RuleKind::SoftFloor,
        };
        RawMechanism { rule, floor: m.rule.floor(), tie_policy: m.tie_policy, price_space: m.price_space }
    }
}

/// One bidder's submission in a period, after type and query are known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Participant {
    pub bid: f64,
    pub ctr: f64,
    /// Whether the bidder's clause contains the realized query.
    pub eligible: bool,
}

impl Participant {
    #[inline]
    pub fn score(&self) -> f64 {
        if self.eligible {
            self.bid * self.ctr
        } else {
            0.0
        }
    }
}

/// A winning bidder and the per-click price it pays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Award {
    pub bidder: usize,
    pub price_per_click: f64,
}

/// Result of one auction period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuctionOutcome {
    /// Winners sharing the top score, in bidder order. Empty when unsold.
    pub tied_winners: Vec<Award>,
    /// Bidders whose clause contains the query.
    pub eligible: Vec<usize>,
}

impl AuctionOutcome {
    pub fn is_sold(&self) -> bool {
        !self.tied_winners.is_empty()
    }

    /// Canonical winner: the lowest-index tied winner.
    pub fn winner(&self) -> Option<usize> {
        self.tied_winners.first().map(|a| a.bidder)
    }

    /// Price paid by the canonical winner; zero when unsold.
    pub fn price_per_click(&self) -> f64 {
        self.tied_winners.first().map_or(0.0, |a| a.price_per_click)
    }

    pub fn award_for(&self, bidder: usize) -> Option<&Award> {
        self.tied_winners.iter().find(|a| a.bidder == bidder)
    }
}

#[inline]
fn better_competitor(score: f64, bid: f64, best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((s, b)) => score > s || (score == s && bid > b),
    }
}

#[inline]
fn competing_price(space: PriceSpace, winner_bid: f64, winner_ctr: f64, runner: (f64, f64)) -> f64 {
    let (score, bid) = runner;
    match space {
        PriceSpace::Bid => bid.min(winner_bid),
        PriceSpace::Score => (score / winner_ctr).min(winner_bid),
    }
}

/// Resolves one period given each bidder's participation.
pub fn resolve(participants: &[Participant], mechanism: &MechanismSpec) -> AuctionOutcome {
    let eligible: Vec<usize> = (0..participants.len()).filter(|&i| participants[i].eligible).collect();
    if eligible.is_empty() {
        return AuctionOutcome { tied_winners: Vec::new(), eligible };
    }
    let top = eligible.iter().map(|&i| participants[i].score()).fold(0.0_f64, f64::max);

    if top == 0.0 {
        // Every eligible score is zero: all of them tie at price zero.
        if matches!(mechanism.rule, PricingRule::HardReserve(r) if r > 0.0) {
            return AuctionOutcome { tied_winners: Vec::new(), eligible };
        }
        let tied_winners =
            eligible.iter().map(|&bidder| Award { bidder, price_per_click: 0.0 }).collect();
        return AuctionOutcome { tied_winners, eligible };
    }

    let mut tied_winners = Vec::new();
    for &w in &eligible {
        let pw = participants[w];
        if pw.score() != top {
            continue;
        }
        let mut runner: Option<(f64, f64)> = None;
        for &j in &eligible {
            let pj = participants[j];
            let sj = pj.score();
            if j != w && sj > 0.0 && better_competitor(sj, pj.bid, runner) {
                runner = Some((sj, pj.bid));
            }
        }
        let b2 = runner.map(|r| competing_price(mechanism.price_space, pw.bid, pw.ctr, r));
        if let Some(price_per_click) = mechanism.rule.price(pw.bid, b2) {
            tied_winners.push(Award { bidder: w, price_per_click });
        }
    }
    AuctionOutcome { tied_winners, eligible }
}

/// Surplus divisor for a tie among `tied` winners in an `n`-bidder auction.
#[inline]
pub fn tie_divisor(policy: TiePolicy, tied: usize, n: usize) -> f64 {
    if tied <= 1 {
        1.0
    } else {
        match policy {
            TiePolicy::DivideByN => n as f64,
            TiePolicy::DivideByTied => tied as f64,
        }
    }
}

/// Resolves the auction for realized query `q`, types and actions.
pub fn resolve_auction(
    scenario: &Scenario,
    q: usize,
    types: &[u16],
    actions: &[Action],
    mechanism: &MechanismSpec,
) -> Result<AuctionOutcome> {
    let participants = participants_for(scenario, q, types, actions)?;
    Ok(resolve(&participants, mechanism))
}

/// Builds each bidder's participation record, checking every index.
pub fn participants_for(
    scenario: &Scenario,
    q: usize,
    types: &[u16],
    actions: &[Action],
) -> Result<Vec<Participant>> {
    let n = scenario.num_bidders();
    if types.len() != n || actions.len() != n {
        return Err(contract(format!(
            "expected {n} types and actions, got {} and {}",
            types.len(),
            actions.len()
        )));
    }
    if q >= scenario.num_queries() {
        return Err(contract(format!("query index {q} out of range")));
    }
    let mut out = Vec::with_capacity(n);
    for (i, (bidder, (&ty, action))) in
        scenario.bidders().iter().zip(types.iter().zip(actions)).enumerate()
    {
        let ty = ty as usize;
        if ty >= bidder.num_types() {
            return Err(contract(format!("type {ty} out of range for bidder {i}")));
        }
        if action.bid_index >= scenario.bid_grid().len()
            || action.clause_index >= scenario.clauses().len()
        {
            return Err(contract(format!("action {action:?} out of range for bidder {i}")));
        }
        out.push(Participant {
            bid: scenario.bid_grid()[action.bid_index],
            ctr: bidder.ctr(ty, q),
            eligible: scenario.clauses()[action.clause_index].contains(q),
        });
    }
    Ok(out)
}

/// Expected (over clicks) utility of `bidder` in a resolved period.
pub fn reward(
    outcome: &AuctionOutcome,
    bidder: usize,
    ctr: f64,
    value: f64,
    num_bidders: usize,
    tie_policy: TiePolicy,
) -> f64 {
    match outcome.award_for(bidder) {
        None => 0.0,
        Some(award) => {
            let div = tie_divisor(tie_policy, outcome.tied_winners.len(), num_bidders);
            ctr * (value - award.price_per_click) / div
        }
    }
}

static CLAMP_COUNT: AtomicU64 = AtomicU64::new(0);

/// Number of times [`normalize_reward`] had to clamp an out-of-range utility.
pub fn clamp_count() -> u64 {
    CLAMP_COUNT.load(Ordering::Relaxed)
}

/// Affine map of utility from `[-b_max, v_max]` onto `[0, 1]`.
#[inline]
pub fn normalize_reward(eu: f64, v_max: f64, b_max: f64) -> f64 {
    let clamped = if eu < -b_max || eu > v_max {
        CLAMP_COUNT.fetch_add(1, Ordering::Relaxed);
        eu.clamp(-b_max, v_max)
    } else {
        eu
    };
    (clamped + b_max) / (v_max + b_max)
}

/// Everything one bidder needs to know about its opponents to evaluate any of
/// its own bids in O(1).
#[derive(Debug, Clone, Copy)]
pub struct Opponents {
    /// Highest positive opponent score and the largest bid achieving it.
    top: Option<(f64, f64)>,
    /// Opponents sharing the top score.
    top_count: usize,
    /// Opponents sharing the top score whose bid clears the hard reserve.
    top_count_reserve: usize,
    /// All eligible opponents, including zero scores.
    eligible: usize,
}

impl Opponents {
    pub fn new(participants: &[Participant], bidder: usize, mechanism: &MechanismSpec) -> Self {
        let reserve = match mechanism.rule {
            PricingRule::HardReserve(r) => r,
            _ => 0.0,
        };
        let mut top: Option<(f64, f64)> = None;
        let mut eligible = 0;
        for (j, p) in participants.iter().enumerate() {
            if j == bidder || !p.eligible {
                continue;
            }
            eligible += 1;
            let s = p.score();
            if s > 0.0 && better_competitor(s, p.bid, top) {
                top = Some((s, p.bid));
            }
        }
        let (mut top_count, mut top_count_reserve) = (0, 0);
        if let Some((ts, _)) = top {
            for (j, p) in participants.iter().enumerate() {
                if j != bidder && p.eligible && p.score() == ts {
                    top_count += 1;
                    if p.bid >= reserve {
                        top_count_reserve += 1;
                    }
                }
            }
        }
        Opponents { top, top_count, top_count_reserve, eligible }
    }

    /// Utility of an eligible bidder bidding `bid` with the given CTR and value.
    #[inline]
    pub fn utility(
        &self,
        bid: f64,
        ctr: f64,
        value: f64,
        mechanism: &MechanismSpec,
        num_bidders: usize,
    ) -> f64 {
        let score = bid * ctr;
        let top_score = self.top.map_or(0.0, |t| t.0);
        if score < top_score {
            return 0.0;
        }
        if top_score == 0.0 && score == 0.0 {
            if matches!(mechanism.rule, PricingRule::HardReserve(r) if r > 0.0) {
                return 0.0;
            }
            let div = tie_divisor(mechanism.tie_policy, 1 + self.eligible, num_bidders);
            return ctr * value / div;
        }
        let b2 = self.top.map(|r| competing_price(mechanism.price_space, bid, ctr, r));
        let Some(price) = mechanism.rule.price(bid, b2) else {
            return 0.0;
        };
        let tied = if score == top_score {
            let others = match mechanism.rule {
                PricingRule::HardReserve(_) => self.top_count_reserve,
                _ => self.top_count,
            };
            1 + others
        } else {
            1
        };
        ctr * (value - price) / tie_divisor(mechanism.tie_policy, tied, num_bidders)
    }
}

/// Normalized reward `bidder` would have earned for every action in the
/// action space, holding all other actions fixed.
pub fn counterfactual_rewards(
    scenario: &Scenario,
    q: usize,
    types: &[u16],
    actions: &[Action],
    mechanism: &MechanismSpec,
    bidder: usize,
) -> Result<Vec<f64>> {
    let participants = participants_for(scenario, q, types, actions)?;
    if bidder >= scenario.num_bidders() {
        return Err(contract(format!("bidder {bidder} out of range")));
    }
    let mut per_bid = vec![0.0; scenario.bid_grid().len()];
    let mut out = vec![0.0; scenario.num_actions()];
    let b = &scenario.bidders()[bidder];
    let ty = types[bidder] as usize;
    fill_counterfactual(
        scenario,
        &participants,
        mechanism,
        bidder,
        q,
        b.ctr(ty, q),
        b.value(ty, q),
        true,
        &mut per_bid,
        &mut out,
    );
    Ok(out)
}

/// Allocation-free core of [`counterfactual_rewards`]; `per_bid` is scratch.
/// With `normalize` off the entries are raw expected utilities.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fill_counterfactual(
    scenario: &Scenario,
    participants: &[Participant],
    mechanism: &MechanismSpec,
    bidder: usize,
    q: usize,
    ctr: f64,
    value: f64,
    normalize: bool,
    per_bid: &mut [f64],
    out: &mut [f64],
) {
    let (v_max, b_max) = (scenario.v_max(), scenario.b_max());
    let n = scenario.num_bidders();
    let opponents = Opponents::new(participants, bidder, mechanism);
    let scale = |eu: f64| if normalize { normalize_reward(eu, v_max, b_max) } else { eu };
    for (slot, &bid) in per_bid.iter_mut().zip(scenario.bid_grid()) {
        *slot = scale(opponents.utility(bid, ctr, value, mechanism, n));
    }
    let absent = scale(0.0);
    let nb = per_bid.len();
    for (c, clause) in scenario.clauses().iter().enumerate() {
        let dst = &mut out[c * nb..(c + 1) * nb];
        if clause.contains(q) {
            dst.copy_from_slice(per_bid);
        } else {
            dst.fill(absent);
        }
    }
}
