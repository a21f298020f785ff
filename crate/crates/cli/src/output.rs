use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use auctionsim::simulator::{BatchResult, Trace};
use auctionsim::{Action, Error, PricingRule, Scenario};
use serde::Serialize;

/// Version tag written into every metadata file.
pub const FORMAT_VERSION: &str = "auctionsim-output/1";

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

fn floor_field(rule: PricingRule) -> String {
    rule.floor().map(|f| f.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct RevenueRow<'a> {
    scenario_id: &'a str,
    mechanism: &'a str,
    floor: String,
    run_seed: u64,
    mean_revenue: f64,
}

pub fn write_revenues<'a>(
    path: &Path,
    scenario_id: &str,
    batches: impl IntoIterator<Item = (PricingRule, &'a BatchResult)>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (rule, batch) in batches {
        for run in &batch.runs {
            w.serialize(RevenueRow {
                scenario_id,
                mechanism: rule.kind(),
                floor: floor_field(rule),
                run_seed: run.run_seed,
                mean_revenue: run.mean_revenue,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow<'a> {
    scenario_id: &'a str,
    mechanism: &'a str,
    floor: String,
    runs: usize,
    mean_revenue: f64,
    stdev_revenue: f64,
}

pub fn write_sweep<'a>(
    path: &Path,
    scenario_id: &str,
    points: impl IntoIterator<Item = (PricingRule, &'a BatchResult)>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (rule, batch) in points {
        w.serialize(SweepRow {
            scenario_id,
            mechanism: rule.kind(),
            floor: floor_field(rule),
            runs: batch.runs.len(),
            mean_revenue: batch.mean,
            stdev_revenue: batch.std_dev,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Window bid counts; zero-count cells are omitted.
pub fn write_bids(path: &Path, scenario: &Scenario, batch: &BatchResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["scenario_id", "run_seed", "bidder", "type", "clause_mask", "bid", "count"])?;
    let grid = scenario.bid_grid();
    let clauses = scenario.clauses();
    for run in &batch.runs {
        let h = &run.bid_histogram;
        for (i, bidder) in scenario.bidders().iter().enumerate() {
            for (ty, name) in bidder.types.iter().enumerate() {
                for (c, clause) in clauses.iter().enumerate() {
                    for (b, bid) in grid.iter().enumerate() {
                        let count = h.count(i, ty, c, b);
                        if count == 0 {
                            continue;
                        }
                        w.write_record([
                            scenario.id().to_string(),
                            run.run_seed.to_string(),
                            i.to_string(),
                            name.clone(),
                            clause.mask().to_string(),
                            bid.to_string(),
                            count.to_string(),
                        ])?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

const TRACE_HEADER: [&str; 9] =
    ["run_seed", "period", "query", "winner", "price", "bidder", "type", "clause_index", "bid_index"];

/// One row per (period, bidder) of every recorded run.
pub fn write_trace(path: &Path, scenario: &Scenario, batch: &BatchResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER)?;
    for run in &batch.runs {
        let Some(trace) = &run.trace else { continue };
        for k in 0..trace.len() {
            let winner = trace.winners[k].map(|b| b.to_string()).unwrap_or_default();
            for (i, (&ty, &a)) in trace.types_at(k).iter().zip(trace.actions_at(k)).enumerate() {
                let action = scenario.action_at(a as usize);
                w.write_record([
                    run.run_seed.to_string(),
                    trace.periods[k].to_string(),
                    trace.queries[k].to_string(),
                    winner.clone(),
                    trace.prices[k].to_string(),
                    i.to_string(),
                    ty.to_string(),
                    action.clause_index.to_string(),
                    action.bid_index.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
struct TraceRow {
    run_seed: u64,
    period: usize,
    query: u16,
    winner: Option<u16>,
    price: f64,
    bidder: usize,
    #[serde(rename = "type")]
    ty: u16,
    clause_index: usize,
    bid_index: usize,
}

fn parse_error(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Reads a trace written by [`write_trace`], one [`Trace`] per run seed in
/// file order.
pub fn read_trace(path: &Path, scenario: &Scenario) -> Result<Vec<(u64, Trace)>> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let n = scenario.num_bidders();
    let mut out: Vec<(u64, Trace)> = Vec::new();
    let mut pending: Vec<TraceRow> = Vec::with_capacity(n);
    let mut types = vec![0u16; n];
    let mut actions = vec![0u32; n];
    for (line, row) in reader.deserialize::<TraceRow>().enumerate() {
        let row = row.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => anyhow::Error::new(e),
            _ => parse_error(format!("trace row {}: {e}", line + 2)).into(),
        })?;
        if row.bidder != pending.len() {
            return Err(parse_error(format!("trace row {}: bidders out of order", line + 2)).into());
        }
        let bidder = &scenario.bidders()[row.bidder.min(n - 1)];
        if row.bidder >= n
            || row.ty as usize >= bidder.num_types()
            || row.clause_index >= scenario.clauses().len()
            || row.bid_index >= scenario.bid_grid().len()
            || row.query as usize >= scenario.num_queries()
            || row.winner.is_some_and(|w| w as usize >= n)
        {
            return Err(parse_error(format!("trace row {}: index out of range", line + 2)).into());
        }
        pending.push(row);
        if pending.len() < n {
            continue;
        }
        let first = &pending[0];
        if pending.iter().any(|r| {
            (r.run_seed, r.period, r.query, r.winner) != (first.run_seed, first.period, first.query, first.winner)
        }) {
            return Err(parse_error(format!("trace row {}: inconsistent period rows", line + 2)).into());
        }
        for (i, r) in pending.iter().enumerate() {
            types[i] = r.ty;
            let action = Action { clause_index: r.clause_index, bid_index: r.bid_index };
            actions[i] = scenario.action_index(action) as u32;
        }
        if out.last().is_none_or(|(seed, _)| *seed != first.run_seed) {
            out.push((first.run_seed, Trace::new(n)));
        }
        let trace = &mut out.last_mut().expect("pushed above").1;
        trace.push(first.period, first.query, &types, &actions, first.winner, first.price);
        pending.clear();
    }
    if !pending.is_empty() {
        return Err(parse_error("trace ends mid-period").into());
    }
    Ok(out)
}
