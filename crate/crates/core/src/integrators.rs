//! Integrators: map a market and rank-order lists to a recommendation matrix.
//!
//! `one_sided` fills each proposer's capacity from the top of his list.
//! `da_iterative` and `ecda_iterative` run the proposal/rejection protocols
//! literally; `greedy_da` and `greedy_ecda` compute the same outcomes for
//! date-sorted lists with one sort and a linear scan.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{MarketInstance, RankOrderLists};

/// Residual amounts below this are treated as exhausted by the iterative
/// fractional protocol.
const FRACTION_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum IntegratorError {
    #[error("receiver {receiver}: DA requires integer capacity, got {value}")]
    NonIntegerCapacity { receiver: usize, value: f64 },
    #[error("receiver {receiver}: capacity {value} must be finite and nonnegative")]
    InvalidCapacity { receiver: usize, value: f64 },
    #[error("expected {expected} {what}, found {found}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },
    #[error("pair {pair}: exposure weight {value} must be finite and nonnegative")]
    InvalidWeight { pair: usize, value: f64 },
    #[error("iterative protocol exceeded {limit} proposal rounds")]
    RoundLimit { limit: usize },
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MatrixError {
    #[error("entry ({proposer},{receiver}) outside the {rows}x{cols} market")]
    OutOfBounds { proposer: u32, receiver: u32, rows: usize, cols: usize },
    #[error("entry ({proposer},{receiver}) = {value} outside [0,1]")]
    ValueOutOfRange { proposer: u32, receiver: u32, value: f64 },
    #[error("duplicate entry ({proposer},{receiver})")]
    Duplicate { proposer: u32, receiver: u32 },
    #[error("entry ({proposer},{receiver}) is not an eligible pair")]
    Ineligible { proposer: u32, receiver: u32 },
    #[error("proposer {proposer}: row sum {sum} exceeds cognitive capacity {capacity}")]
    RowCapacity { proposer: u32, sum: f64, capacity: u32 },
    #[error("matrix is {rows}x{cols} but market is {market_rows}x{market_cols}")]
    Shape { rows: usize, cols: usize, market_rows: usize, market_cols: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub proposer: u32,
    pub receiver: u32,
    pub value: f64,
}

/// Sparse recommendation probabilities. Entries are kept sorted by
/// `(proposer, receiver)` and only nonzero values are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct RecommendationMatrix {
    n_proposers: usize,
    n_receivers: usize,
    entries: Vec<Entry>,
}

impl RecommendationMatrix {
    pub fn zeros(n_proposers: usize, n_receivers: usize) -> Self {
        Self { n_proposers, n_receivers, entries: Vec::new() }
    }

    pub fn from_entries(
        n_proposers: usize,
        n_receivers: usize,
        mut entries: Vec<Entry>,
    ) -> Result<Self, MatrixError> {
        for e in &entries {
            if e.proposer as usize >= n_proposers || e.receiver as usize >= n_receivers {
                return Err(MatrixError::OutOfBounds {
                    proposer: e.proposer,
                    receiver: e.receiver,
                    rows: n_proposers,
                    cols: n_receivers,
                });
            }
            if !(0.0..=1.0).contains(&e.value) {
                return Err(MatrixError::ValueOutOfRange {
                    proposer: e.proposer,
                    receiver: e.receiver,
                    value: e.value,
                });
            }
        }
        entries.retain(|e| e.value > 0.0);
        entries.sort_by_key(|e| (e.proposer, e.receiver));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].proposer, w[0].receiver) == (w[1].proposer, w[1].receiver))
        {
            return Err(MatrixError::Duplicate { proposer: w[0].proposer, receiver: w[0].receiver });
        }
        Ok(Self { n_proposers, n_receivers, entries })
    }

    /// Builds a matrix from one value per market pair (pair order).
    pub fn from_pair_values(market: &MarketInstance, values: &[f64]) -> Self {
        assert_eq!(values.len(), market.n_pairs());
        let entries = market
            .pairs()
            .iter()
            .zip(values)
            .filter(|(_, &v)| v > 0.0)
            .map(|(p, &value)| Entry { proposer: p.proposer, receiver: p.receiver, value })
            .collect();
        Self { n_proposers: market.n_proposers(), n_receivers: market.n_receivers(), entries }
    }

    pub fn n_proposers(&self) -> usize {
        self.n_proposers
    }

    pub fn n_receivers(&self) -> usize {
        self.n_receivers
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, proposer: u32, receiver: u32) -> f64 {
        self.entries
            .binary_search_by_key(&(proposer, receiver), |e| (e.proposer, e.receiver))
            .map(|k| self.entries[k].value)
            .unwrap_or(0.0)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_proposers];
        for e in &self.entries {
            sums[e.proposer as usize] += e.value;
        }
        sums
    }

    /// Largest absolute entrywise difference, counting missing entries as 0.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut a = self.entries.iter().peekable();
        let mut b = other.entries.iter().peekable();
        let mut worst = 0.0f64;
        loop {
            let d = match (a.peek().copied(), b.peek().copied()) {
                (None, None) => break,
                (Some(x), None) => {
                    a.next();
                    x.value
                }
                (None, Some(y)) => {
                    b.next();
                    y.value
                }
                (Some(x), Some(y)) => match (x.proposer, x.receiver).cmp(&(y.proposer, y.receiver)) {
                    std::cmp::Ordering::Less => {
                        a.next();
                        x.value
                    }
                    std::cmp::Ordering::Greater => {
                        b.next();
                        y.value
                    }
                    std::cmp::Ordering::Equal => {
                        a.next();
                        b.next();
                        (x.value - y.value).abs()
                    }
                },
            };
            worst = worst.max(d);
        }
        worst
    }

    /// One value per market pair, in pair order.
    pub fn to_pair_values(&self, market: &MarketInstance) -> Result<Vec<f64>, MatrixError> {
        self.check_shape(market)?;
        let mut values = vec![0.0; market.n_pairs()];
        for e in &self.entries {
            let idx = market
                .pair_index(e.proposer, e.receiver)
                .ok_or(MatrixError::Ineligible { proposer: e.proposer, receiver: e.receiver })?;
            values[idx] = e.value;
        }
        Ok(values)
    }

    /// `(pair index, value)` for every stored entry.
    pub fn pair_entries(&self, market: &MarketInstance) -> Result<Vec<(usize, f64)>, MatrixError> {
        self.check_shape(market)?;
        self.entries
            .iter()
            .map(|e| {
                market
                    .pair_index(e.proposer, e.receiver)
                    .map(|idx| (idx, e.value))
                    .ok_or(MatrixError::Ineligible { proposer: e.proposer, receiver: e.receiver })
            })
            .collect()
    }

    fn check_shape(&self, market: &MarketInstance) -> Result<(), MatrixError> {
        if self.n_proposers != market.n_proposers() || self.n_receivers != market.n_receivers() {
            return Err(MatrixError::Shape {
                rows: self.n_proposers,
                cols: self.n_receivers,
                market_rows: market.n_proposers(),
                market_cols: market.n_receivers(),
            });
        }
        Ok(())
    }

    /// Shape, eligibility and row capacity (within `tol`).
    pub fn check_feasible(&self, market: &MarketInstance, tol: f64) -> Result<(), MatrixError> {
        self.pair_entries(market)?;
        for (i, (&sum, &cap)) in self.row_sums().iter().zip(market.capacity()).enumerate() {
            if sum > cap as f64 + tol {
                return Err(MatrixError::RowCapacity { proposer: i as u32, sum, capacity: cap });
            }
        }
        Ok(())
    }

    fn from_unsorted(n_proposers: usize, n_receivers: usize, mut entries: Vec<Entry>) -> Self {
        entries.retain(|e| e.value > 0.0);
        entries.sort_unstable_by_key(|e| (e.proposer, e.receiver));
        Self { n_proposers, n_receivers, entries }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExposureKind {
    #[serde(rename = "headcount")]
    Headcount,
    #[serde(rename = "like")]
    LikeExposure,
    #[serde(rename = "date")]
    DateExposure,
}

impl fmt::Display for ExposureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExposureKind::Headcount => "headcount",
            ExposureKind::LikeExposure => "like",
            ExposureKind::DateExposure => "date",
        })
    }
}

impl FromStr for ExposureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "headcount" => Ok(ExposureKind::Headcount),
            "like" => Ok(ExposureKind::LikeExposure),
            "date" => Ok(ExposureKind::DateExposure),
            other => Err(format!(
                "unknown exposure kind `{other}` (expected `headcount`, `like` or `date`)"
            )),
        }
    }
}

/// Receiver budget consumed per unit of recommendation, one value per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureWeights {
    kind: ExposureKind,
    values: Vec<f64>,
}

impl ExposureWeights {
    pub fn kind(&self) -> ExposureKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check(&self, market: &MarketInstance) -> Result<(), IntegratorError> {
        if self.values.len() != market.n_pairs() {
            return Err(IntegratorError::LengthMismatch {
                what: "exposure weights",
                expected: market.n_pairs(),
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

pub fn exposure_weights(kind: ExposureKind, market: &MarketInstance) -> ExposureWeights {
    let n = market.n_pairs();
    let values = match kind {
        ExposureKind::Headcount => vec![1.0; n],
        ExposureKind::LikeExposure => (0..n).map(|k| market.like_exposure(k)).collect(),
        ExposureKind::DateExposure => (0..n).map(|k| market.delta(k)).collect(),
    };
    ExposureWeights { kind, values }
}

/// Per-receiver capacity `q_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverCapacity(Vec<f64>);

impl ReceiverCapacity {
    pub fn uniform(n_receivers: usize, q: f64) -> Self {
        Self(vec![q; n_receivers])
    }

    pub fn new(values: Vec<f64>) -> Result<Self, IntegratorError> {
        if let Some((receiver, &value)) =
            values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(IntegratorError::InvalidCapacity { receiver, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_integral(&self) -> bool {
        self.0.iter().all(|v| v.fract() == 0.0)
    }

    fn check(&self, market: &MarketInstance) -> Result<(), IntegratorError> {
        if self.0.len() != market.n_receivers() {
            return Err(IntegratorError::LengthMismatch {
                what: "receiver capacities",
                expected: market.n_receivers(),
                found: self.0.len(),
            });
        }
        if let Some((receiver, &value)) =
            self.0.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(IntegratorError::InvalidCapacity { receiver, value });
        }
        Ok(())
    }

    fn headcounts(&self, market: &MarketInstance) -> Result<Vec<usize>, IntegratorError> {
        self.check(market)?;
        self.0
            .iter()
            .enumerate()
            .map(|(receiver, &value)| {
                if value.fract() != 0.0 {
                    Err(IntegratorError::NonIntegerCapacity { receiver, value })
                } else {
                    Ok(value.min(market.n_proposers() as f64) as usize)
                }
            })
            .collect()
    }
}

/// Order in which unmatched proposers are picked by the iterative protocols.
/// The outcome does not depend on it; `Random` exists to test exactly that.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProposalOrder {
    #[default]
    Fifo,
    Random { seed: u64 },
}

#[derive(Clone, Debug, Default)]
pub struct IterativeOptions {
    pub order: ProposalOrder,
    /// Overrides the default round bound `2·pairs·(1 + ceil(max c_i))`.
    pub max_rounds: Option<usize>,
}

/// Queue of proposers that can still propose.
struct ActiveSet {
    queue: VecDeque<u32>,
    queued: Vec<bool>,
    rng: Option<ChaCha8Rng>,
}

impl ActiveSet {
    fn new(n: usize, order: ProposalOrder) -> Self {
        let rng = match order {
            ProposalOrder::Fifo => None,
            ProposalOrder::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Self { queue: VecDeque::new(), queued: vec![false; n], rng }
    }

    fn push(&mut self, i: usize) {
        if !self.queued[i] {
            self.queued[i] = true;
            self.queue.push_back(i as u32);
        }
    }

    fn pop(&mut self) -> Option<usize> {
        let i = match &mut self.rng {
            None => self.queue.pop_front()?,
            Some(rng) => {
                if self.queue.is_empty() {
                    return None;
                }
                let k = rng.random_range(0..self.queue.len());
                self.queue.swap_remove_back(k)?
            }
        } as usize;
        self.queued[i] = false;
        Some(i)
    }
}

/// Each proposer's list as pair indices, plus each pair's position in its
/// receiver's list.
fn indexed_lists(market: &MarketInstance, rols: &RankOrderLists) -> (Vec<Vec<usize>>, Vec<u32>) {
    let proposer_pairs = (0..market.n_proposers())
        .map(|i| {
            rols.proposer_list(i)
                .iter()
                .map(|&j| market.pair_index(i as u32, j).expect("rank-order list names an ineligible pair"))
                .collect()
        })
        .collect();
    let mut receiver_rank = vec![u32::MAX; market.n_pairs()];
    for j in 0..market.n_receivers() {
        for (rank, &i) in rols.receiver_list(j).iter().enumerate() {
            let idx = market.pair_index(i, j as u32).expect("rank-order list names an ineligible pair");
            receiver_rank[idx] = rank as u32;
        }
    }
    (proposer_pairs, receiver_rank)
}

/// Recommends the first `c_i` receivers of each proposer's list.
pub fn one_sided(market: &MarketInstance, rols: &RankOrderLists) -> RecommendationMatrix {
    let mut entries = Vec::new();
    for i in 0..market.n_proposers() {
        let take = market.capacity()[i] as usize;
        entries.extend(rols.proposer_list(i).iter().take(take).map(|&j| Entry {
            proposer: i as u32,
            receiver: j,
            value: 1.0,
        }));
    }
    RecommendationMatrix::from_unsorted(market.n_proposers(), market.n_receivers(), entries)
}

/// Proposer-proposing many-to-many deferred acceptance with headcount
/// capacities `q_j`.
pub fn da_iterative(
    market: &MarketInstance,
    rols: &RankOrderLists,
    q: &ReceiverCapacity,
) -> Result<RecommendationMatrix, IntegratorError> {
    da_iterative_with(market, rols, q, ProposalOrder::Fifo)
}

pub fn da_iterative_with(
    market: &MarketInstance,
    rols: &RankOrderLists,
    q: &ReceiverCapacity,
    order: ProposalOrder,
) -> Result<RecommendationMatrix, IntegratorError> {
    let caps = q.headcounts(market)?;
    let (proposer_pairs, receiver_rank) = indexed_lists(market, rols);
    let n = market.n_proposers();
    let capacity = market.capacity();

    let mut next = vec![0usize; n];
    let mut held_count = vec![0u32; n];
    let mut held: Vec<BTreeSet<(u32, u32)>> = vec![BTreeSet::new(); market.n_receivers()];
    let mut active = ActiveSet::new(n, order);
    let can_propose = |i: usize, next: &[usize], held_count: &[u32]| {
        held_count[i] < capacity[i] && next[i] < proposer_pairs[i].len()
    };
    for i in 0..n {
        if can_propose(i, &next, &held_count) {
            active.push(i);
        }
    }

    while let Some(i) = active.pop() {
        if !can_propose(i, &next, &held_count) {
            continue;
        }
        let idx = proposer_pairs[i][next[i]];
        next[i] += 1;
        let j = market.pair(idx).receiver as usize;
        held_count[i] += 1;
        held[j].insert((receiver_rank[idx], i as u32));
        if held[j].len() > caps[j] {
            let (_, worst) = held[j].pop_last().expect("nonempty");
            held_count[worst as usize] -= 1;
            if can_propose(worst as usize, &next, &held_count) {
                active.push(worst as usize);
            }
        }
        if can_propose(i, &next, &held_count) {
            active.push(i);
        }
    }

    let entries = held
        .iter()
        .enumerate()
        .flat_map(|(j, set)| {
            set.iter().map(move |&(_, i)| Entry { proposer: i, receiver: j as u32, value: 1.0 })
        })
        .collect();
    Ok(RecommendationMatrix::from_unsorted(n, market.n_receivers(), entries))
}

fn default_round_limit(market: &MarketInstance) -> usize {
    let max_c = market.capacity().iter().copied().max().unwrap_or(0) as usize;
    2 * market.n_pairs().max(1) * (1 + max_c)
}

/// Fractional deferred acceptance where accepting proposer `i` uses `w_ij`
/// units of receiver `j`'s capacity per unit recommended.
pub fn ecda_iterative(
    market: &MarketInstance,
    rols: &RankOrderLists,
    q: &ReceiverCapacity,
    w: &ExposureWeights,
) -> Result<RecommendationMatrix, IntegratorError> {
    ecda_iterative_with(market, rols, q, w, &IterativeOptions::default())
}

pub fn ecda_iterative_with(
    market: &MarketInstance,
    rols: &RankOrderLists,
    q: &ReceiverCapacity,
    w: &ExposureWeights,
    options: &IterativeOptions,
) -> Result<RecommendationMatrix, IntegratorError> {
    q.check(market)?;
    w.check(market)?;
    let weights = w.values();
    if let Some((pair, &value)) =
        weights.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(IntegratorError::InvalidWeight { pair, value });
    }
    let (proposer_pairs, receiver_rank) = indexed_lists(market, rols);
    let n = market.n_proposers();
    let limit = options.max_rounds.unwrap_or_else(|| default_round_limit(market));

    let mut amount = vec![0.0f64; market.n_pairs()];
    let mut rejected = vec![false; market.n_pairs()];
    let mut residual: Vec<f64> = market.capacity().iter().map(|&c| c as f64).collect();
    let mut next = vec![0usize; n];
    // receiver -> (rank, pair) of tentatively held proposals
    let mut held: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); market.n_receivers()];
    let mut active = ActiveSet::new(n, options.order);

    // Advances `next[i]` past receivers that rejected i or are already full
    // for this pair; returns whether i can still propose.
    let refresh = |i: usize, next: &mut [usize], amount: &[f64], rejected: &[bool], residual: &[f64]| {
        let list = &proposer_pairs[i];
        while next[i] < list.len() {
            let idx = list[next[i]];
            if rejected[idx] || amount[idx] >= 1.0 - FRACTION_EPS {
                next[i] += 1;
            } else {
                break;
            }
        }
        residual[i] > FRACTION_EPS && next[i] < list.len()
    };
    for i in 0..n {
        if refresh(i, &mut next, &amount, &rejected, &residual) {
            active.push(i);
        }
    }

    let mut rounds = 0usize;
    let mut freed: Vec<usize> = Vec::new();
    while let Some(i) = active.pop() {
        if !refresh(i, &mut next, &amount, &rejected, &residual) {
            continue;
        }
        rounds += 1;
        if rounds > limit {
            return Err(IntegratorError::RoundLimit { limit });
        }

        let idx = proposer_pairs[i][next[i]];
        let offer = (1.0 - amount[idx]).min(residual[i]);
        amount[idx] += offer;
        residual[i] -= offer;
        let j = market.pair(idx).receiver as usize;
        held[j].insert(receiver_rank[idx], idx);

        // Re-evaluate everything j holds, in her order, from a full budget.
        let mut budget = q.values()[j];
        let mut dropped = Vec::new();
        for (&rank, &k) in held[j].iter() {
            let cur = amount[k];
            let wk = weights[k];
            let take = if wk == 0.0 { cur } else { (budget / wk).clamp(0.0, cur) };
            if take >= cur - FRACTION_EPS {
                budget = (budget - wk * cur).max(0.0);
                continue;
            }
            rejected[k] = true;
            let p = market.pair(k).proposer as usize;
            residual[p] += cur - take;
            freed.push(p);
            if take <= FRACTION_EPS {
                amount[k] = 0.0;
                dropped.push(rank);
            } else {
                amount[k] = take;
                budget = (budget - wk * take).max(0.0);
            }
        }
        for rank in dropped {
            held[j].remove(&rank);
        }
        for p in freed.drain(..).chain(std::iter::once(i)) {
            if refresh(p, &mut next, &amount, &rejected, &residual) {
                active.push(p);
            }
        }
    }

    Ok(RecommendationMatrix::from_pair_values(market, &amount))
}

/// Pair indices sorted by descending dating rate, ties by ascending pair
/// index (proposer, then receiver). Keys are unique, so the unstable parallel
/// sort is deterministic.
pub fn date_order(market: &MarketInstance) -> Vec<(f64, u32)> {
    let mut keys: Vec<(f64, u32)> =
        (0..market.n_pairs()).map(|k| (market.delta(k), k as u32)).collect();
    keys.par_sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keys
}

/// Deferred acceptance under date-sorted lists, computed as a greedy pass.
pub fn greedy_da(
    market: &MarketInstance,
    q: &ReceiverCapacity,
) -> Result<RecommendationMatrix, IntegratorError> {
    let caps = q.headcounts(market)?;
    let mut row_left: Vec<u32> = market.capacity().to_vec();
    let mut col_left = caps;
    let mut entries = Vec::new();
    for (_, idx) in date_order(market) {
        let p = market.pair(idx as usize);
        let (i, j) = (p.proposer as usize, p.receiver as usize);
        if row_left[i] > 0 && col_left[j] > 0 {
            row_left[i] -= 1;
            col_left[j] -= 1;
            entries.push(Entry { proposer: p.proposer, receiver: p.receiver, value: 1.0 });
        }
    }
    Ok(RecommendationMatrix::from_unsorted(market.n_proposers(), market.n_receivers(), entries))
}

/// Exposure-constrained deferred acceptance under date-sorted lists,
/// computed as a greedy pass:
/// `M_ij = min(1, c_i − Σ_k M_ik, (q_j − Σ_l w_lj M_lj) / w_ij)`.
///
/// Zero-weight pairs use no receiver budget and get `min(1, c_i − Σ_k M_ik)`.
pub fn greedy_ecda(
    market: &MarketInstance,
    q: &ReceiverCapacity,
    w: &ExposureWeights,
) -> Result<RecommendationMatrix, IntegratorError> {
    q.check(market)?;
    w.check(market)?;
    let weights = w.values();
    let mut row_left: Vec<f64> = market.capacity().iter().map(|&c| c as f64).collect();
    let mut budget: Vec<f64> = q.values().to_vec();
    let mut entries = Vec::new();
    for (_, idx) in date_order(market) {
        let idx = idx as usize;
        let p = market.pair(idx);
        let (i, j) = (p.proposer as usize, p.receiver as usize);
        let wij = weights[idx];
        let mut m = row_left[i].min(1.0);
        if wij > 0.0 {
            m = m.min(budget[j] / wij);
        } else if wij < 0.0 || wij.is_nan() {
            return Err(IntegratorError::InvalidWeight { pair: idx, value: wij });
        }
        if m > 0.0 {
            row_left[i] -= m;
            budget[j] -= wij * m;
            entries.push(Entry { proposer: p.proposer, receiver: p.receiver, value: m });
        }
    }
    Ok(RecommendationMatrix::from_unsorted(market.n_proposers(), market.n_receivers(), entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::tests::pair;
    use crate::market::{build_rols, validate_market, RawMarket, SortKind};

    fn market(
        proposer_login: Vec<f64>,
        receiver_login: Vec<f64>,
        pairs: Vec<crate::Pair>,
        capacity: Vec<u32>,
    ) -> MarketInstance {
        validate_market(RawMarket { proposer_login, receiver_login, pairs, capacity }).unwrap()
    }

    /// Dense market with all logins and relikes 1, so δ equals the like rate.
    fn delta_market(deltas: &[&[f64]], capacity: Vec<u32>) -> MarketInstance {
        let pairs = deltas
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter().enumerate().map(move |(j, &d)| pair(i as u32, j as u32, d, 1.0))
            })
            .collect();
        market(vec![1.0; deltas.len()], vec![1.0; deltas[0].len()], pairs, capacity)
    }

    fn dense(m: &RecommendationMatrix) -> Vec<Vec<f64>> {
        (0..m.n_proposers())
            .map(|i| (0..m.n_receivers()).map(|j| m.get(i as u32, j as u32)).collect())
            .collect()
    }

    #[test]
    fn one_sided_prefix() {
        let mk = delta_market(&[&[0.2, 0.5, 0.1, 0.9]], vec![2]);
        let rols = build_rols(&mk, SortKind::DateSort);
        assert_eq!(rols.proposer_list(0), &[3, 1, 0, 2]);
        let m = one_sided(&mk, &rols);
        assert_eq!(dense(&m), vec![vec![0.0, 1.0, 0.0, 1.0]]);
    }

    #[test]
    fn one_sided_truncates_to_list() {
        let mk = market(vec![1.0], vec![1.0, 1.0], vec![pair(0, 1, 0.5, 0.5)], vec![5]);
        let m = one_sided(&mk, &build_rols(&mk, SortKind::DateSort));
        assert_eq!(m.row_sums(), vec![1.0]);
        assert_eq!(m.get(0, 1), 1.0);
    }

    #[test]
    fn one_sided_allows_congestion() {
        let mk = delta_market(&[&[0.9, 0.1], &[0.8, 0.2]], vec![1, 1]);
        let m = one_sided(&mk, &build_rols(&mk, SortKind::DateSort));
        assert_eq!(dense(&m), vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn exposure_weight_kinds() {
        let mk = market(vec![0.5], vec![0.8], vec![pair(0, 0, 0.4, 0.25)], vec![1]);
        assert_eq!(exposure_weights(ExposureKind::Headcount, &mk).values(), &[1.0]);
        assert_eq!(exposure_weights(ExposureKind::LikeExposure, &mk).values(), &[0.2]);
        assert_eq!(exposure_weights(ExposureKind::DateExposure, &mk).values(), &[mk.delta(0)]);
    }

    #[test]
    fn da_zero_capacity_gives_zero_matrix() {
        let mk = delta_market(&[&[0.4, 0.3], &[0.2, 0.1]], vec![1, 1]);
        let rols = build_rols(&mk, SortKind::DateSort);
        let m = da_iterative(&mk, &rols, &ReceiverCapacity::uniform(2, 0.0)).unwrap();
        assert_eq!(m.nnz(), 0);
    }

    #[test]
    fn da_hand_executed_two_by_two() {
        // Both proposers prefer r0; r0 keeps p0 (δ 0.4 > 0.2), p1 moves to r1.
        let mk = delta_market(&[&[0.4, 0.3], &[0.2, 0.1]], vec![1, 1]);
        let rols = build_rols(&mk, SortKind::DateSort);
        let q = ReceiverCapacity::uniform(2, 1.0);
        let expected = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(dense(&da_iterative(&mk, &rols, &q).unwrap()), expected);
        assert_eq!(dense(&greedy_da(&mk, &q).unwrap()), expected);
    }

    #[test]
    fn da_slack_capacity_is_one_sided() {
        let mk = delta_market(&[&[0.4, 0.3, 0.5], &[0.2, 0.1, 0.6], &[0.7, 0.1, 0.6]], vec![2, 1, 2]);
        for kind in [SortKind::LikeSort, SortKind::DateSort] {
            let rols = build_rols(&mk, kind);
            let q = ReceiverCapacity::uniform(3, 3.0);
            assert_eq!(da_iterative(&mk, &rols, &q).unwrap(), one_sided(&mk, &rols));
        }
    }

    #[test]
    fn da_rejects_fractional_capacity() {
        let mk = delta_market(&[&[0.4]], vec![1]);
        let err = greedy_da(&mk, &ReceiverCapacity::uniform(1, 1.5)).unwrap_err();
        assert!(err.to_string().contains("DA requires integer capacity"));
    }

    #[test]
    fn ecda_fractional_boundary() {
        // δ = (0.04, 0.03), q = 0.05: p0 uses 0.04, p1 gets 0.01/0.03 = 1/3.
        let mk = market(
            vec![1.0, 1.0],
            vec![1.0],
            vec![pair(0, 0, 0.04, 1.0), pair(1, 0, 0.03, 1.0)],
            vec![1, 1],
        );
        let rols = build_rols(&mk, SortKind::DateSort);
        let q = ReceiverCapacity::uniform(1, 0.05);
        let w = exposure_weights(ExposureKind::DateExposure, &mk);
        for m in [ecda_iterative(&mk, &rols, &q, &w).unwrap(), greedy_ecda(&mk, &q, &w).unwrap()] {
            assert_eq!(m.get(0, 0), 1.0);
            assert!((m.get(1, 0) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ecda_headcount_matches_da() {
        let mk = delta_market(&[&[0.4, 0.3, 0.5], &[0.2, 0.1, 0.6], &[0.7, 0.1, 0.6]], vec![2, 1, 2]);
        let w = exposure_weights(ExposureKind::Headcount, &mk);
        for kind in [SortKind::LikeSort, SortKind::DateSort] {
            let rols = build_rols(&mk, kind);
            for q in [0.0, 1.0, 2.0] {
                let q = ReceiverCapacity::uniform(3, q);
                assert_eq!(
                    ecda_iterative(&mk, &rols, &q, &w).unwrap(),
                    da_iterative(&mk, &rols, &q).unwrap()
                );
            }
        }
        let q = ReceiverCapacity::uniform(3, 1.0);
        assert_eq!(greedy_ecda(&mk, &q, &w).unwrap(), greedy_da(&mk, &q).unwrap());
    }

    #[test]
    fn ecda_zero_capacity() {
        let mk = delta_market(&[&[0.4, 0.3], &[0.2, 0.1]], vec![1, 1]);
        let rols = build_rols(&mk, SortKind::DateSort);
        let w = exposure_weights(ExposureKind::DateExposure, &mk);
        let q = ReceiverCapacity::uniform(2, 0.0);
        assert_eq!(ecda_iterative(&mk, &rols, &q, &w).unwrap().nnz(), 0);
        assert_eq!(greedy_ecda(&mk, &q, &w).unwrap().nnz(), 0);
    }

    #[test]
    fn greedy_ecda_proposer_capacity_binds() {
        let mk = delta_market(&[&[0.2, 0.6, 0.4]], vec![1]);
        let q = ReceiverCapacity::uniform(3, 10.0);
        let w = exposure_weights(ExposureKind::DateExposure, &mk);
        let m = greedy_ecda(&mk, &q, &w).unwrap();
        assert_eq!(dense(&m), vec![vec![0.0, 1.0, 0.0]]);
    }

    #[test]
    fn greedy_single_pair() {
        let mk = delta_market(&[&[0.3]], vec![1]);
        let m = greedy_da(&mk, &ReceiverCapacity::uniform(1, 1.0)).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn zero_weight_pairs_skip_budget() {
        // Proposer 1 never logs in: like exposure 0, δ 0.
        let mk = market(
            vec![1.0, 0.0],
            vec![1.0],
            vec![pair(0, 0, 0.5, 1.0), pair(1, 0, 0.5, 1.0)],
            vec![1, 1],
        );
        let rols = build_rols(&mk, SortKind::DateSort);
        let q = ReceiverCapacity::uniform(1, 0.25);
        let w = exposure_weights(ExposureKind::LikeExposure, &mk);
        let greedy = greedy_ecda(&mk, &q, &w).unwrap();
        assert_eq!(greedy.get(0, 0), 0.5);
        assert_eq!(greedy.get(1, 0), 1.0);
        assert!(greedy.max_abs_diff(&ecda_iterative(&mk, &rols, &q, &w).unwrap()) < 1e-12);
    }

    #[test]
    fn round_limit_is_reported() {
        let mk = delta_market(&[&[0.4, 0.3], &[0.2, 0.1]], vec![1, 1]);
        let rols = build_rols(&mk, SortKind::DateSort);
        let w = exposure_weights(ExposureKind::DateExposure, &mk);
        let opts = IterativeOptions { max_rounds: Some(1), ..Default::default() };
        let err = ecda_iterative_with(&mk, &rols, &ReceiverCapacity::uniform(2, 1.0), &w, &opts)
            .unwrap_err();
        assert_eq!(err, IntegratorError::RoundLimit { limit: 1 });
    }

    #[test]
    fn matrix_validation() {
        let e = |proposer, receiver, value| Entry { proposer, receiver, value };
        assert!(RecommendationMatrix::from_entries(1, 1, vec![e(0, 0, 1.5)]).is_err());
        assert!(RecommendationMatrix::from_entries(1, 1, vec![e(0, 1, 0.5)]).is_err());
        assert!(
            RecommendationMatrix::from_entries(1, 2, vec![e(0, 1, 0.5), e(0, 1, 0.2)]).is_err()
        );
        let m = RecommendationMatrix::from_entries(2, 2, vec![e(1, 0, 0.5), e(0, 1, 0.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        let mk = market(vec![1.0, 1.0], vec![1.0, 1.0], vec![pair(0, 0, 0.5, 0.5)], vec![1, 1]);
        assert!(matches!(m.check_feasible(&mk, 1e-9), Err(MatrixError::Ineligible { .. })));
    }
}
