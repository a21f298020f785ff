use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use auctionsim::equilibrium::coarse_bce_epsilon;
use auctionsim::inference::{mae, shading_for, InferenceConfig};
use auctionsim::mechanisms::clamp_count;
use auctionsim::simulator::{
    derive_run_seeds, run_batch_with_env, sweep_with_env, BatchResult, SweepParameter, Trace,
};
use auctionsim::{
    infer_values, sample_env_sequence, EmpiricalProfile, Error, LearnerSpec, MechanismSpec,
    PricingRule, RunOptions, Scenario,
};
use serde_json::{json, Value};

use crate::args::{BceArgs, InferArgs, RunArgs, ScenarioArgs, SweepArgs};
use crate::input::read_observed_bids;
use crate::output::{
    csv_writer, read_trace, write_bids, write_json, write_revenues, write_sweep, write_trace,
    FORMAT_VERSION,
};

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Scenario::from_toml_str(&text)?)
}

/// Loads the scenario and applies the command-line overrides.
fn prepare(common: &ScenarioArgs, rule: Option<PricingRule>) -> Result<Scenario> {
    let base = load_scenario(&common.scenario)?;
    let scenario = base.modified(|c| {
        if let Some(runs) = common.runs {
            c.runs = runs;
        }
        if let Some(seed) = common.seed {
            c.master_seed = seed;
        }
        if let Some(h) = common.horizon {
            c.horizon = h;
        }
        if let Some(rule) = rule {
            c.mechanism.rule = rule;
        }
    })?;
    if scenario.runs() == 0 {
        return Err(Error::InvalidScenario("runs must be positive".into()).into());
    }
    Ok(scenario)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn learner_json(spec: &LearnerSpec) -> Value {
    match *spec {
        LearnerSpec::Hedge { eta, raw_rewards } => {
            json!({ "algorithm": "hedge", "eta": eta, "raw_rewards": raw_rewards })
        }
        LearnerSpec::Exp3Ix { eta, gamma } => {
            json!({ "algorithm": "exp3ix", "eta": eta, "gamma": gamma })
        }
    }
}

fn mechanism_json(m: &MechanismSpec) -> Value {
    json!({
        "rule": m.rule.to_string(),
        "tie_policy": format!("{:?}", m.tie_policy),
        "price_space": format!("{:?}", m.price_space),
    })
}

fn scenario_metadata(command: &str, scenario: &Scenario, seeds: &[u64]) -> Value {
    json!({
        "format_version": FORMAT_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "scenario_id": scenario.id(),
        "mechanism": mechanism_json(scenario.mechanism()),
        "learner": learner_json(scenario.learner()),
        "horizon": scenario.horizon(),
        "window_len": scenario.window_len(),
        "env_seed": scenario.env_seed(),
        "master_seed": scenario.master_seed(),
        "run_seeds": seeds,
        "stdev": "population",
    })
}

fn summary_line(id: &str, rule: PricingRule, batch: &BatchResult) -> String {
    format!(
        "{id} {rule}: mean_revenue {} stdev {} runs {}",
        batch.mean,
        batch.std_dev,
        batch.runs.len()
    )
}

pub fn run(args: &RunArgs) -> Result<()> {
    let scenario = prepare(&args.common, args.mechanism)?;
    let env = sample_env_sequence(&scenario);
    let seeds = derive_run_seeds(scenario.master_seed(), scenario.runs());
    let options = RunOptions { record_trace: args.trace, realized_clicks: args.realized_clicks };
    let batch = run_batch_with_env(&scenario, &env, &seeds, options)?;

    let out = &args.common.out;
    create_out(out)?;
    let rule = scenario.mechanism().rule;
    write_revenues(&out.join("revenues.csv"), scenario.id(), [(rule, &batch)])?;
    write_bids(&out.join("bids.csv"), &scenario, &batch)?;
    if args.trace {
        write_trace(&out.join("trace.csv"), &scenario, &batch)?;
    }
    let mut meta = scenario_metadata("run", &scenario, &seeds);
    meta["realized_clicks"] = json!(args.realized_clicks);
    meta["mean_revenue"] = json!(batch.mean);
    meta["stdev_revenue"] = json!(batch.std_dev);
    meta["clamp_count"] = json!(clamp_count());
    write_json(&out.join("metadata.json"), &meta)?;
    println!("{}", summary_line(scenario.id(), rule, &batch));
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    if args.sweep_values.is_empty() && args.reserve_values.is_empty() {
        bail!(Error::InvalidScenario("no sweep values given".into()));
    }
    let scenario = prepare(&args.common, None)?;
    let env = sample_env_sequence(&scenario);
    let seeds = derive_run_seeds(scenario.master_seed(), scenario.runs());
    let options = RunOptions::default();
    let mut points = sweep_with_env(
        &scenario,
        &env,
        &seeds,
        SweepParameter::SoftFloor,
        &args.sweep_values,
        options,
    )?;
    points.extend(sweep_with_env(
        &scenario,
        &env,
        &seeds,
        SweepParameter::HardReserve,
        &args.reserve_values,
        options,
    )?);

    let out = &args.common.out;
    create_out(out)?;
    let rows: Vec<(PricingRule, &BatchResult)> =
        points.iter().map(|p| (p.parameter.rule(p.value), &p.batch)).collect();
    write_sweep(&out.join("sweep.csv"), scenario.id(), rows.iter().copied())?;
    write_revenues(&out.join("revenues.csv"), scenario.id(), rows.iter().copied())?;
    let mut meta = scenario_metadata("sweep", &scenario, &seeds);
    meta["soft_floors"] = json!(args.sweep_values);
    meta["hard_reserves"] = json!(args.reserve_values);
    meta["clamp_count"] = json!(clamp_count());
    write_json(&out.join("metadata.json"), &meta)?;
    for (rule, batch) in rows {
        println!("{}", summary_line(scenario.id(), rule, batch));
    }
    Ok(())
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let default_percentiles = auctionsim::inference::DEFAULT_PERCENTILES.to_vec();
    let percentiles = args.percentiles.as_deref().unwrap_or(&default_percentiles);
    let observed = read_observed_bids(&args.bids, percentiles)?;
    let config = InferenceConfig {
        percentiles: observed.percentiles.clone(),
        weighting: args.weighting.into(),
        alpha: args.alpha,
        max_iterations: args.iterations,
        runs_per_iteration: args.runs,
        num_bidders: args.bidders,
        horizon: args.horizon,
        grid_resolution: args.grid_resolution,
        master_seed: args.seed,
        ..Default::default()
    };
    let mechanism = MechanismSpec::new(args.mechanism);
    let result = infer_values(&observed.bids, &mechanism, &config)?;
    if result.input_flattened {
        eprintln!("warning: observed percentiles are not monotone; flattened before inference");
    }
    let best = result.best_iteration();
    let shading = shading_for(&result)?;

    create_out(&args.out)?;
    let mut w = csv_writer(&args.out.join("inference.csv"))?;
    w.write_record(["iteration", "percentile", "observed_bid", "predicted_bid", "inferred_value", "mae"])?;
    for rec in &result.iterations {
        for k in 0..result.percentiles.len() {
            w.write_record([
                rec.iteration.to_string(),
                result.percentiles[k].to_string(),
                result.observed_bids[k].to_string(),
                rec.predicted_bids[k].to_string(),
                rec.values[k].to_string(),
                rec.mae.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv_writer(&args.out.join("shading.csv"))?;
    w.write_record(["percentile", "value", "predicted_bid", "shading"])?;
    for k in 0..result.percentiles.len() {
        w.write_record([
            result.percentiles[k].to_string(),
            best.values[k].to_string(),
            best.predicted_bids[k].to_string(),
            shading.per_percentile[k].to_string(),
        ])?;
    }
    w.flush()?;

    let value_mae = match &args.true_values {
        Some(truth) => Some(mae(truth, &best.values)?),
        None => None,
    };
    let meta = json!({
        "format_version": FORMAT_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": "infer",
        "mechanism": mechanism_json(&mechanism),
        "percentiles": result.percentiles,
        "weighting": format!("{:?}", config.weighting),
        "alpha": config.alpha,
        "max_iterations": config.max_iterations,
        "runs_per_iteration": config.runs_per_iteration,
        "num_bidders": config.num_bidders,
        "horizon": config.horizon,
        "window_fraction": config.window_fraction,
        "eta": config.eta,
        "bid_grid_step": 1.0 / config.grid_resolution as f64,
        "env_seed": config.env_seed,
        "master_seed": config.master_seed,
        "input_flattened": result.input_flattened,
        "converged": result.converged,
        "best_iteration": best.iteration,
        "best_mae": best.mae,
        "value_mae": value_mae,
        "mean_shading": shading.mean,
        "shading_ci": [shading.ci_low, shading.ci_high],
        "clamp_count": clamp_count(),
    });
    write_json(&args.out.join("metadata.json"), &meta)?;

    println!("best iteration {} of {}: bid MAE {}", best.iteration, result.iterations.len(), best.mae);
    if let Some(v) = value_mae {
        println!("value MAE {v}");
    }
    println!("mean shading {} (95% CI {} to {})", shading.mean, shading.ci_low, shading.ci_high);
    Ok(())
}

fn merge_traces(traces: Vec<(u64, Trace)>, num_bidders: usize) -> Trace {
    let mut merged = Trace::new(num_bidders);
    for (_, t) in traces {
        merged.periods.extend(t.periods);
        merged.queries.extend(t.queries);
        merged.types.extend(t.types);
        merged.actions.extend(t.actions);
        merged.winners.extend(t.winners);
        merged.prices.extend(t.prices);
    }
    merged
}

pub fn bce(args: &BceArgs) -> Result<()> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(rule) = args.mechanism {
        scenario = scenario.modified(|c| c.mechanism.rule = rule)?;
    }
    if !args.trace_file.is_file() {
        return Err(anyhow::Error::new(Error::TraceDisabled)
            .context(format!("{} not found; rerun with --trace", args.trace_file.display())));
    }
    let mut traces = read_trace(&args.trace_file, &scenario)?;
    if let Some(seed) = args.run_seed {
        traces.retain(|(s, _)| *s == seed);
    }
    let seeds: Vec<u64> = traces.iter().map(|(s, _)| *s).collect();
    let trace = merge_traces(traces, scenario.num_bidders());
    let profile = EmpiricalProfile::from_trace(&trace)?;
    let report = coarse_bce_epsilon(&profile, &scenario)?;

    create_out(&args.out)?;
    let mut w = csv_writer(&args.out.join("bce.csv"))?;
    w.write_record(["bidder", "type", "best_deviation_bid", "best_deviation_clause", "gain", "realized"])?;
    let grid = scenario.bid_grid();
    for g in &report.gains {
        let (bid, clause, gain) = if g.realized {
            (
                grid[g.best_action.bid_index].to_string(),
                scenario.clauses()[g.best_action.clause_index].mask().to_string(),
                g.gain.to_string(),
            )
        } else {
            Default::default()
        };
        w.write_record([
            g.bidder.to_string(),
            scenario.bidders()[g.bidder].types[g.ty].clone(),
            bid,
            clause,
            gain,
            g.realized.to_string(),
        ])?;
    }
    w.flush()?;
    let meta = json!({
        "format_version": FORMAT_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": "bce",
        "scenario_id": scenario.id(),
        "mechanism": mechanism_json(scenario.mechanism()),
        "run_seeds": seeds,
        "samples": profile.len(),
        "epsilon": report.epsilon,
        "raw_max_gain": report.raw_max_gain,
        "unrealized_types": report.unrealized().len(),
    });
    write_json(&args.out.join("metadata.json"), &meta)?;
    println!("epsilon {} over {} samples", report.epsilon, profile.len());
    let unrealized = report.unrealized();
    if !unrealized.is_empty() {
        println!("{} (bidder, type) pairs never realized", unrealized.len());
    }
    Ok(())
}
