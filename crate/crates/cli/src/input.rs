use std::path::Path;

use anyhow::{Context, Result};
use auctionsim::inference::{observed_percentiles, weighted_percentiles};
use auctionsim::Error;

/// Observed bids at a fixed set of percentiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedBids {
    pub percentiles: Vec<f64>,
    pub bids: Vec<f64>,
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: '{}' is not a number", field.trim())).into())
}

/// Reads observed bids in one of three layouts, told apart by the header:
/// a `percentile,observed_bid` table, a bids.csv with `bid` and `count`
/// columns, or bare samples one per line. `percentiles` is used for the
/// latter two.
pub fn read_observed_bids(path: &Path, percentiles: &[f64]) -> Result<ObservedBids> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let Some(&(_, first)) = lines.first() else {
        return Err(Error::EmptySamples.into());
    };
    let header: Vec<&str> = first.split(',').map(str::trim).collect();
    let column = |name: &str| header.iter().position(|h| *h == name);

    if let (Some(p), Some(b)) = (column("percentile"), column("observed_bid")) {
        let mut out = ObservedBids { percentiles: Vec::new(), bids: Vec::new() };
        for &(line, l) in &lines[1..] {
            let fields: Vec<&str> = l.split(',').collect();
            let get = |k: usize| {
                fields.get(k).copied().ok_or_else(|| Error::Parse(format!("line {line}: missing column")))
            };
            out.percentiles.push(parse_f64(get(p)?, line)?);
            out.bids.push(parse_f64(get(b)?, line)?);
        }
        if out.bids.is_empty() {
            return Err(Error::EmptySamples.into());
        }
        return Ok(out);
    }

    if let (Some(b), Some(c)) = (column("bid"), column("count")) {
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for &(line, l) in &lines[1..] {
            let fields: Vec<&str> = l.split(',').collect();
            let (Some(bid), Some(count)) = (fields.get(b), fields.get(c)) else {
                return Err(Error::Parse(format!("line {line}: missing column")).into());
            };
            values.push(parse_f64(bid, line)?);
            weights.push(parse_f64(count, line)?);
        }
        let bids = weighted_percentiles(&values, &weights, percentiles)?;
        return Ok(ObservedBids { percentiles: percentiles.to_vec(), bids });
    }

    let samples = lines.iter().map(|&(line, l)| parse_f64(l, line)).collect::<Result<Vec<_>>>()?;
    let bids = observed_percentiles(&samples, percentiles)?;
    Ok(ObservedBids { percentiles: percentiles.to_vec(), bids })
}
