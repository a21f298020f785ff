//! Repeated online ad auctions with no-regret bidders.
//!
//! Each bidder type learns a (bid, targeting clause) policy with Hedge or
//! EXP3-IX while an auctioneer applies first-price, second-price, hard
//! reserve or soft-floor pricing. On top of the simulator sit an empirical
//! coarse Bayes correlated equilibrium checker and an iterative procedure
//! that infers bidder values from observed bid percentiles.

pub mod env;
pub mod equilibrium;
pub mod error;
pub mod inference;
pub mod learners;
pub mod mechanisms;
pub mod simulator;

pub use env::{action_space, sample_env_sequence, Action, Clause, EnvSequence, Scenario, ScenarioConfig};
pub use equilibrium::{coarse_bce_epsilon, realized_regret, BceReport, EmpiricalProfile};
pub use error::{Error, Result};
pub use inference::{infer_values, shading_report, InferenceConfig, InferenceResult, ShadingReport};
pub use learners::{exp3ix_tuning, LearnerSpec, LearnerState};
pub use mechanisms::{
    normalize_reward, resolve_auction, AuctionOutcome, MechanismSpec, PriceSpace, PricingRule,
    TiePolicy,
};
pub use simulator::{
    run_batch, run_simulation, sweep, BatchResult, RunOptions, RunResult, SweepParameter,
};
