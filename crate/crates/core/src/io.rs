//! CSV and JSON formats for markets, matrices, reports and logs.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Deserialize;
use thiserror::Error;

use crate::decompose::{MenuComponent, MenuDecomposition};
use crate::integrators::{Entry, MatrixError, RecommendationMatrix};
use crate::market::{MarketInstance, Pair, RawMarket, UserId, ValidationError, Violation};
use crate::metrics::MetricsReport;
use crate::realization::{EventLog, MonteCarloReport, RealizedStats};
use crate::synth::{RateDistribution, SynthError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Deserialize)]
struct PairRow {
    proposer_id: u32,
    receiver_id: u32,
    lambda_p: f64,
    alpha: f64,
    lambda_r: f64,
    beta: f64,
}

fn note_login(slot: &mut Option<f64>, user: UserId, value: f64, violations: &mut Vec<Violation>) {
    match *slot {
        None => *slot = Some(value),
        Some(first) if first.to_bits() != value.to_bits() => {
            if !violations.iter().any(|v| matches!(v, Violation::InconsistentLogin { user: u, .. } if *u == user)) {
                violations.push(Violation::InconsistentLogin { user, first, other: value });
            }
        }
        Some(_) => {}
    }
}

/// Reads a pair CSV. Each side has `max id + 1` users; a user with no pair
/// gets login rate 0. Every proposer starts with `default_capacity`.
pub fn read_pair_csv<R: Read>(reader: R, default_capacity: u32) -> Result<RawMarket, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut pairs = Vec::new();
    let mut p_login: Vec<Option<f64>> = Vec::new();
    let mut r_login: Vec<Option<f64>> = Vec::new();
    let mut violations = Vec::new();
    for row in rdr.deserialize::<PairRow>() {
        let row = row?;
        let (i, j) = (row.proposer_id as usize, row.receiver_id as usize);
        if p_login.len() <= i {
            p_login.resize(i + 1, None);
        }
        if r_login.len() <= j {
            r_login.resize(j + 1, None);
        }
        note_login(&mut p_login[i], UserId::proposer(row.proposer_id), row.lambda_p, &mut violations);
        note_login(&mut r_login[j], UserId::receiver(row.receiver_id), row.lambda_r, &mut violations);
        pairs.push(Pair { proposer: row.proposer_id, receiver: row.receiver_id, like: row.alpha, relike: row.beta });
    }
    if !violations.is_empty() {
        return Err(ValidationError { violations }.into());
    }
    Ok(RawMarket {
        capacity: vec![default_capacity; p_login.len()],
        proposer_login: p_login.into_iter().map(|l| l.unwrap_or(0.0)).collect(),
        receiver_login: r_login.into_iter().map(|l| l.unwrap_or(0.0)).collect(),
        pairs,
    })
}

pub fn write_pair_csv<W: Write>(writer: W, market: &MarketInstance) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["proposer_id", "receiver_id", "lambda_p", "alpha", "lambda_r", "beta"])?;
    for p in market.pairs() {
        w.write_record([
            p.proposer.to_string(),
            p.receiver.to_string(),
            market.proposer_login()[p.proposer as usize].to_string(),
            p.like.to_string(),
            market.receiver_login()[p.receiver as usize].to_string(),
            p.relike.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct CapacityRow {
    proposer_id: u32,
    capacity: u32,
}

/// Overrides proposer capacities from a `proposer_id,capacity` CSV.
pub fn read_capacity_csv<R: Read>(reader: R, raw: &mut RawMarket) -> Result<(), IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for row in rdr.deserialize::<CapacityRow>() {
        let row = row?;
        match raw.capacity.get_mut(row.proposer_id as usize) {
            Some(c) => *c = row.capacity,
            None => {
                return Err(IoError::Invalid(format!(
                    "capacity given for unknown proposer {}",
                    row.proposer_id
                )))
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct ReceiverCapacityRow {
    receiver_id: u32,
    q: f64,
}

/// Per-receiver capacities from a `receiver_id,q` CSV; every receiver must
/// appear exactly once.
pub fn read_receiver_capacity_csv<R: Read>(reader: R, n_receivers: usize) -> Result<Vec<f64>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut q = vec![None; n_receivers];
    for row in rdr.deserialize::<ReceiverCapacityRow>() {
        let row = row?;
        let slot = q
            .get_mut(row.receiver_id as usize)
            .ok_or_else(|| IoError::Invalid(format!("capacity given for unknown receiver {}", row.receiver_id)))?;
        if slot.replace(row.q).is_some() {
            return Err(IoError::Invalid(format!("receiver {} listed twice", row.receiver_id)));
        }
    }
    q.into_iter()
        .enumerate()
        .map(|(j, v)| v.ok_or_else(|| IoError::Invalid(format!("no capacity for receiver {j}"))))
        .collect()
}

pub fn write_matrix_csv<W: Write>(writer: W, m: &RecommendationMatrix) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["proposer_id", "receiver_id", "m"])?;
    for e in m.entries() {
        w.write_record([e.proposer.to_string(), e.receiver.to_string(), e.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct MatrixRow {
    proposer_id: u32,
    receiver_id: u32,
    m: f64,
}

pub fn read_matrix_csv<R: Read>(
    reader: R,
    n_proposers: usize,
    n_receivers: usize,
) -> Result<RecommendationMatrix, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let entries = rdr
        .deserialize::<MatrixRow>()
        .map(|r| r.map(|r| Entry { proposer: r.proposer_id, receiver: r.receiver_id, value: r.m }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RecommendationMatrix::from_entries(n_proposers, n_receivers, entries)?)
}

pub const METRIC_COLUMNS: [&str; 7] = [
    "avg_dates_proposer",
    "avg_dates_receiver",
    "avg_effective_dates",
    "dating_prob_proposer",
    "dating_prob_receiver",
    "avg_likes_receiver",
    "avg_likes_proposer",
];

pub fn metric_values(r: &MetricsReport) -> [f64; 7] {
    [
        r.avg_dates_proposer,
        r.avg_dates_receiver,
        r.avg_effective_dates,
        r.dating_prob_proposer,
        r.dating_prob_receiver,
        r.avg_likes_receiver,
        r.avg_likes_proposer,
    ]
}

pub fn write_metrics_csv<W: Write>(writer: W, run_id: &str, r: &MetricsReport) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(std::iter::once("run_id").chain(METRIC_COLUMNS))?;
    w.write_record(std::iter::once(run_id.to_string()).chain(metric_values(r).iter().map(f64::to_string)))?;
    w.flush()?;
    Ok(())
}

pub fn write_load_csv<W: Write>(writer: W, r: &MetricsReport) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["receiver_id", "mu", "like_load"])?;
    for (j, (mu, like)) in r.receiver_load.0.iter().zip(&r.receiver_like_load).enumerate() {
        w.write_record([j.to_string(), mu.to_string(), like.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_event_log_csv<W: Write>(writer: W, logs: &[EventLog]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["day", "proposer_id", "receiver_id", "shown", "p_login", "liked", "r_login", "reliked", "dated"])?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for log in logs {
        let day = log.day.to_string();
        for e in &log.events {
            w.write_record([
                day.as_str(),
                &e.proposer.to_string(),
                &e.receiver.to_string(),
                flag(e.shown),
                flag(e.proposer_login),
                flag(e.liked),
                flag(e.receiver_login),
                flag(e.reliked),
                flag(e.dated()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_realized_csv<W: Write>(writer: W, run_id: &str, r: &MonteCarloReport) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["run_id".to_string(), "n_days".to_string()];
    for name in RealizedStats::NAMES {
        header.push(format!("{name}_realized"));
        header.push(format!("{name}_se"));
    }
    w.write_record(&header)?;
    let mut row = vec![run_id.to_string(), r.n_days.to_string()];
    for (mean, se) in r.mean.to_array().iter().zip(r.se.to_array()) {
        row.push(mean.to_string());
        row.push(se.to_string());
    }
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

/// `component,weight` index of a decomposition.
pub fn write_components_csv<W: Write>(writer: W, d: &MenuDecomposition) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["component", "weight"])?;
    for (k, c) in d.components.iter().enumerate() {
        w.write_record([k.to_string(), c.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One deterministic menu in the matrix CSV format.
pub fn write_menu_csv<W: Write>(writer: W, c: &MenuComponent) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["proposer_id", "receiver_id", "m"])?;
    for &(i, j) in &c.entries {
        w.write_record([i.to_string(), j.to_string(), "1".to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_distribution<R: Read>(reader: R) -> Result<RateDistribution, IoError> {
    let dist: RateDistribution = serde_json::from_reader(reader)?;
    dist.validate()?;
    Ok(dist)
}

/// Pretty JSON with one cell per line.
pub fn write_distribution<W: Write>(mut writer: W, dist: &RateDistribution) -> Result<(), IoError> {
    let num = |x: f64| serde_json::to_string(&x);
    writeln!(writer, "{{")?;
    writeln!(writer, "  \"bin_width\": {},", num(dist.bin_width)?)?;
    for (name, cells, last) in [
        ("proposer_cells", &dist.proposer_cells, false),
        ("receiver_cells", &dist.receiver_cells, true),
    ] {
        writeln!(writer, "  \"{name}\": [")?;
        for (k, c) in cells.iter().enumerate() {
            let sep = if k + 1 < cells.len() { "," } else { "" };
            writeln!(writer, "    [{}, {}, {}]{sep}", num(c.lambda_lo)?, num(c.other_lo)?, num(c.weight)?)?;
        }
        writeln!(writer, "  ]{}", if last { "" } else { "," })?;
    }
    writeln!(writer, "}}")?;
    Ok(())
}

/// Histogram of `values` over `[0, max]` with `n_bins` equal bins, as
/// `bin_lo,bin_hi,count`. Values at the top edge go in the last bin.
pub fn write_histogram_csv<W: Write>(writer: W, values: &[f64], n_bins: usize) -> Result<(), IoError> {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let width = if max > 0.0 { max / n_bins as f64 } else { 1.0 / n_bins as f64 };
    let mut counts: BTreeMap<usize, u64> = (0..n_bins).map(|b| (b, 0)).collect();
    for &v in values {
        let b = ((v / width).floor() as usize).min(n_bins - 1);
        *counts.get_mut(&b).unwrap() += 1;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (b, c) in counts {
        w.write_record([(b as f64 * width).to_string(), ((b + 1) as f64 * width).to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
