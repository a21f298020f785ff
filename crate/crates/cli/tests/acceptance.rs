//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use auctionsim::env::{BidGridConfig, BidderConfig, ClauseConfig, ClauseSet};
use auctionsim::inference::{mae, shading_for, weighted_percentiles, InferenceConfig, DEFAULT_PERCENTILES};
use auctionsim::learners::{exp3ix_distribution, hedge_distribution};
use auctionsim::mechanisms::{clamp_count, resolve_auction};
use auctionsim::simulator::{derive_run_seeds, run_batch_with_env, sweep_with_env, BatchResult, SweepParameter};
use auctionsim::{
    action_space, coarse_bce_epsilon, exp3ix_tuning, infer_values, run_batch, sample_env_sequence,
    Action, EmpiricalProfile, LearnerSpec, LearnerState, MechanismSpec, PricingRule, RunOptions,
    Scenario, ScenarioConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String), String>;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::from_toml_str(&fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

fn with_rule(s: &Scenario, rule: PricingRule) -> Scenario {
    s.modified(|c| c.mechanism.rule = rule).unwrap()
}

fn batch(s: &Scenario) -> BatchResult {
    run_batch(s, s.runs(), RunOptions::default()).unwrap()
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn textbook_revenue() -> Check {
    let third = 1.0 / 3.0;
    let mut ok = true;
    let mut detail = Vec::new();
    for (file, tol) in [
        ("textbook_hedge_second.toml", 0.02),
        ("textbook_hedge_first.toml", 0.02),
        ("textbook_exp3ix_second.toml", 0.03),
        ("textbook_exp3ix_first.toml", 0.03),
    ] {
        let b = batch(&load(file));
        ok &= within(b.mean, third, tol);
        detail.push(format!("{} {:.4} (+-{tol})", file.trim_end_matches(".toml"), b.mean));
    }
    Ok((ok, detail.join(", ")))
}

fn second_price_truthfulness() -> Check {
    let s = load("textbook_hedge_second.toml");
    let b = batch(&s);
    let grid = s.bid_grid();
    let bidder = &s.bidders()[0];
    let mut wrong = Vec::new();
    for ty in 0..bidder.num_types() {
        let value = bidder.value(ty, 0);
        if value < 0.5 {
            continue;
        }
        let mut counts = vec![0u64; grid.len()];
        for run in &b.runs {
            for i in 0..s.num_bidders() {
                for (k, c) in run.bid_histogram.bid_counts(i, ty).into_iter().enumerate() {
                    counts[k] += c;
                }
            }
        }
        let best = *counts.iter().max().unwrap();
        let modal = grid[counts.iter().position(|&c| c == best).unwrap()];
        if (modal - value).abs() > 1e-9 {
            wrong.push(format!("value {value} modal {modal}"));
        }
    }
    Ok((wrong.is_empty(), if wrong.is_empty() { "all upper-half types bid their value".into() } else { wrong.join("; ") }))
}

fn multi_query_soft_floor() -> Check {
    let s = load("multi_query_hedge.toml");
    let env = sample_env_sequence(&s);
    let seeds = derive_run_seeds(s.master_seed(), s.runs());
    let mean = |rule| run_batch_with_env(&with_rule(&s, rule), &env, &seeds, RunOptions::default()).unwrap().mean;
    let sp = mean(PricingRule::SecondPrice);
    let sf = mean(PricingRule::SoftFloor(0.65));
    let fp = mean(PricingRule::FirstPrice);
    let ok = sp > sf && sf > fp && within(sp, 0.0865, 0.01);
    Ok((ok, format!("SP {sp:.4} > SF(0.65) {sf:.4} > FP {fp:.4}; SP target 0.0865 +-0.01")))
}

fn sfrp_vs_rp() -> Check {
    let s = load("sfrp_vs_rp.toml");
    let env = sample_env_sequence(&s);
    let seeds = derive_run_seeds(s.master_seed(), s.runs());
    let floors: Vec<f64> = (0..=10).map(|k| k as f64 * 0.2).collect();
    let soft = sweep_with_env(&s, &env, &seeds, SweepParameter::SoftFloor, &floors, RunOptions::default()).unwrap();
    let hard = sweep_with_env(&s, &env, &seeds, SweepParameter::HardReserve, &[0.6, 1.8], RunOptions::default()).unwrap();
    let (rp06, rp18) = (hard[0].batch.mean, hard[1].batch.mean);
    let best_soft = soft.iter().map(|p| p.batch.mean).fold(f64::NEG_INFINITY, f64::max);
    let ok = within(rp06, 0.998, 0.03) && rp06 > best_soft && within(rp18, 1.366, 0.05);
    Ok((ok, format!("RP(0.6) {rp06:.4} vs best SF {best_soft:.4}; RP(1.8) {rp18:.4}")))
}

fn grid_scenario(rule: PricingRule) -> Scenario {
    Scenario::new(ScenarioConfig {
        id: "grid".into(),
        queries: Vec::new(),
        query_dist: vec![0.5, 0.5],
        bid_grid: BidGridConfig::Levels(vec![0.0, 0.25, 0.5, 0.75, 1.0]),
        clauses: ClauseConfig::Named(ClauseSet::All),
        mechanism: MechanismSpec::new(rule),
        learner: Default::default(),
        horizon: 10,
        window_fraction: 0.1,
        env_seed: 0,
        master_seed: 0,
        runs: 1,
        bidders: vec![BidderConfig {
            count: 2,
            types: Vec::new(),
            type_dist: vec![1.0],
            values: vec![vec![1.0, 1.0]],
            ctrs: vec![vec![1.0, 1.0]],
        }],
    })
    .unwrap()
}

/// Case-analysis prices for every tied winner, or `None` when unsold.
fn oracle(rule: PricingRule, bids: &[Option<f64>]) -> Option<Vec<(usize, f64)>> {
    let eligible: Vec<(usize, f64)> = bids.iter().enumerate().filter_map(|(i, b)| b.map(|b| (i, b))).collect();
    let top = eligible.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    if eligible.is_empty() {
        return None;
    }
    if top == 0.0 {
        return match rule {
            PricingRule::HardReserve(r) if r > 0.0 => None,
            _ => Some(eligible.iter().map(|e| (e.0, 0.0)).collect()),
        };
    }
    let mut out = Vec::new();
    for &(i, b) in eligible.iter().filter(|e| e.1 == top) {
        let second = eligible.iter().filter(|e| e.0 != i && e.1 > 0.0).map(|e| e.1).fold(0.0, f64::max);
        let price = match rule {
            PricingRule::FirstPrice => b,
            PricingRule::SecondPrice => second,
            PricingRule::HardReserve(r) if b < r => return None,
            PricingRule::HardReserve(r) => second.max(r),
            PricingRule::SoftFloor(s) if second >= s => second,
            PricingRule::SoftFloor(s) if b >= s => s,
            PricingRule::SoftFloor(_) => b,
        };
        out.push((i, price));
    }
    Some(out)
}

fn mechanism_equivalence() -> Check {
    let rules = [
        PricingRule::FirstPrice,
        PricingRule::SecondPrice,
        PricingRule::SoftFloor(0.0),
        PricingRule::SoftFloor(1.5),
        PricingRule::HardReserve(0.0),
    ];
    let scenarios: Vec<Scenario> = rules.iter().map(|&r| grid_scenario(r)).collect();
    let actions = action_space(&scenarios[0]);
    let grid = scenarios[0].bid_grid().to_vec();
    let mut cases = 0;
    let mut mismatches = 0;
    for a in &actions {
        for b in &actions {
            for q in 0..2 {
                let joint = [*a, *b];
                let outcomes: Vec<Option<Vec<(usize, f64)>>> = scenarios
                    .iter()
                    .map(|s| {
                        let o = resolve_auction(s, q, &[0, 0], &joint, s.mechanism()).unwrap();
                        o.is_sold().then(|| o.tied_winners.iter().map(|w| (w.bidder, w.price_per_click)).collect())
                    })
                    .collect();
                let bids: Vec<Option<f64>> = joint
                    .iter()
                    .map(|x: &Action| scenarios[0].clauses()[x.clause_index].contains(q).then(|| grid[x.bid_index]))
                    .collect();
                for (k, &rule) in rules.iter().enumerate() {
                    if outcomes[k] != oracle(rule, &bids) {
                        mismatches += 1;
                    }
                }
                // SF(0) and HR(0) behave as second price; SF above b_max as first price.
                if outcomes[2] != outcomes[1] || outcomes[4] != outcomes[1] || outcomes[3] != outcomes[0] {
                    mismatches += 1;
                }
                cases += 1;
            }
        }
    }
    Ok((mismatches == 0, format!("{cases} joint actions, {mismatches} mismatches")))
}

fn learner_properties() -> Check {
    let mut failures = Vec::new();
    let w = [3.0, -1.0, 0.5, 7.0, 7.0];
    let shifted: Vec<f64> = w.iter().map(|x| x + 128.0).collect();
    for eta in [0.02, 1.0] {
        for (p, q) in [
            (hedge_distribution(&w, eta), hedge_distribution(&shifted, eta)),
            (exp3ix_distribution(&w, eta), exp3ix_distribution(&shifted, eta)),
        ] {
            if (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 || p.iter().any(|&x| x < 0.0) {
                failures.push("normalization");
            }
            if p != q {
                failures.push("shift invariance");
            }
        }
    }

    let spec = LearnerSpec::Hedge { eta: 0.02, raw_rewards: false };
    let mut state = LearnerState::with_dims(spec, 4, &[3, 3]);
    let before = state.clone();
    state.hedge_update(1, 2, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    let isolated = (0..2).all(|b| (0..3).all(|t| (b, t) == (1, 2) || state.table(b, t) == before.table(b, t)));
    if !isolated {
        failures.push("per-type isolation");
    }

    let mut state = LearnerState::with_dims(LearnerSpec::Exp3Ix { eta: 0.05, gamma: 0.01 }, 6, &[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut scratch = vec![0.0; 6];
    for k in 0..500 {
        let old = state.table(0, 0).to_vec();
        let d = state.sample(0, 0, &mut rng, &mut scratch);
        state.exp3ix_update(0, 0, d.action, (k % 7) as f64 / 6.0, d.prob).unwrap();
        if state.table(0, 0).iter().zip(&old).any(|(n, o)| n < o) {
            failures.push("EXP3-IX monotonicity");
            break;
        }
    }

    // sqrt(2 ln(K + 1) / (K T)) at 40 significant digits.
    for (k, t, reference) in [
        (21, 1_000_000, 0.000_542_572_571_697_035_606_046_729_5),
        (84, 5_000_000, 0.000_145_449_242_602_921_145_942_614_8),
    ] {
        let (eta, gamma) = exp3ix_tuning(k, t).unwrap();
        if ((gamma - reference) / reference).abs() > 1e-12 || eta != 2.0 * gamma {
            failures.push("EXP3-IX tuning");
        }
    }
    Ok((failures.is_empty(), if failures.is_empty() { "softmax, isolation, monotonicity, tuning".into() } else { failures.join(", ") }))
}

/// Observed bid percentiles of a simulated second-price market: pooled window
/// bid counts of every bidder, type and run.
fn observed_bids(s: &Scenario) -> Vec<f64> {
    let b = batch(s);
    let grid = s.bid_grid();
    let mut counts = vec![0.0; grid.len()];
    for run in &b.runs {
        for i in 0..s.num_bidders() {
            for ty in 0..s.bidders()[i].num_types() {
                for (k, c) in run.bid_histogram.bid_counts(i, ty).into_iter().enumerate() {
                    counts[k] += c as f64;
                }
            }
        }
    }
    weighted_percentiles(grid, &counts, &DEFAULT_PERCENTILES).unwrap()
}

fn inference_round_trip() -> Check {
    let config = InferenceConfig { max_iterations: 20, runs_per_iteration: 3, ..Default::default() };
    let hypotheses = [PricingRule::SecondPrice, PricingRule::FirstPrice, PricingRule::SoftFloor(1.0)];
    let mut ok = true;
    let mut detail = Vec::new();
    let mut uniform_shading = Vec::new();
    for file in ["values_uniform.toml", "values_right_skewed.toml", "values_left_skewed.toml"] {
        let s = load(file);
        let truth: Vec<f64> = (0..s.bidders()[0].num_types()).map(|t| s.bidders()[0].value(t, 0)).collect();
        let observed = observed_bids(&s);
        let mut maes = Vec::new();
        for rule in hypotheses {
            let r = infer_values(&observed, &MechanismSpec::new(rule), &config).unwrap();
            maes.push(mae(&truth, r.inferred_values()).unwrap());
            if file == "values_uniform.toml" {
                uniform_shading.push(shading_for(&r).unwrap().mean);
            }
        }
        ok &= maes[0] < 0.05 && maes[0] < maes[1] && maes[0] < maes[2];
        detail.push(format!(
            "{}: SP {:.4} FP {:.4} SF {:.4}",
            file.trim_end_matches(".toml"),
            maes[0],
            maes[1],
            maes[2]
        ));
    }
    let (sp, fp, sf) = (uniform_shading[0], uniform_shading[1], uniform_shading[2]);
    let shading_ok = fp > sf && sf > sp && sp.abs() < 0.05;
    ok &= shading_ok;
    detail.push(format!("uniform shading FP {fp:.3} > SF {sf:.3} > SP {sp:.3}"));
    Ok((ok, format!("value MAE {}", detail.join("; "))))
}

fn bce_checker() -> Check {
    let sp = load("textbook_hedge_second.toml");
    let truthful = EmpiricalProfile::from_strategy(&sp, |_, ty| Action { clause_index: 0, bid_index: ty }).unwrap();
    let eps_truthful = coarse_bce_epsilon(&truthful, &sp).unwrap().epsilon;

    let fp = load("textbook_hedge_first.toml");
    let eps_at = |h: usize| {
        let s = fp.modified(|c| c.horizon = h).unwrap();
        let b = run_batch(&s, 1, RunOptions { record_trace: true, realized_clicks: false }).unwrap();
        let profile = EmpiricalProfile::from_trace(b.runs[0].trace.as_ref().unwrap()).unwrap();
        coarse_bce_epsilon(&profile, &s).unwrap().epsilon
    };
    let (short, long) = (eps_at(40_000), eps_at(400_000));
    let ok = eps_truthful == 0.0 && long < short && long < 0.05 * fp.v_max();
    Ok((ok, format!("truthful SP {eps_truthful}; first price T=40k {short:.4}, T=400k {long:.4}")))
}

fn determinism() -> Check {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let bin = env!("CARGO_BIN_EXE_auctionsim");
    let scenario = scenario_path("multi_query_hedge.toml");
    let sweep_scenario = scenario_path("sfrp_vs_rp.toml");
    for d in &dirs {
        let run = Command::new(bin)
            .args(["run", "--scenario", scenario.to_str().unwrap(), "--horizon", "20000", "--runs", "3", "--trace"])
            .args(["--out", d.path().join("run").to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        let sweep = Command::new(bin)
            .args(["sweep", "--scenario", sweep_scenario.to_str().unwrap(), "--horizon", "20000", "--runs", "2"])
            .args(["--sweep-values", "0,1", "--reserve-values", "0.6"])
            .args(["--out", d.path().join("sweep").to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        if !run.status.success() || !sweep.status.success() {
            return Err("command failed".into());
        }
    }
    let files = ["run/revenues.csv", "run/bids.csv", "run/trace.csv", "sweep/sweep.csv", "sweep/revenues.csv"];
    let same = files.iter().all(|f| fs::read(dirs[0].path().join(f)).unwrap() == fs::read(dirs[1].path().join(f)).unwrap());
    Ok((same, format!("{} CSV files compared byte for byte", files.len())))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("mechanism equivalence", mechanism_equivalence),
        ("learner properties", learner_properties),
        ("determinism", determinism),
        ("textbook revenue equivalence", textbook_revenue),
        ("second-price truthfulness", second_price_truthfulness),
        ("multi-query soft floor", multi_query_soft_floor),
        ("SFRP vs RP", sfrp_vs_rp),
        ("coarse BCE checker", bce_checker),
        ("inference round trip", inference_round_trip),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let (pass, detail) = match std::panic::catch_unwind(check) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, e),
            Err(_) => (false, "panicked".into()),
        };
        failed += usize::from(!pass);
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    let clamps = clamp_count();
    failed += usize::from(clamps != 0);
    println!("{} reward clamp counter: {clamps}", if clamps == 0 { "PASS" } else { "FAIL" });
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
