//! Market primitives: users, pairwise rates, dating rates and rank-order lists.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Proposer,
    Receiver,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Proposer => f.write_str("proposer"),
            Side::Receiver => f.write_str("receiver"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId {
    pub side: Side,
    pub index: u32,
}

impl UserId {
    pub fn proposer(index: u32) -> Self {
        Self { side: Side::Proposer, index }
    }

    pub fn receiver(index: u32) -> Self {
        Self { side: Side::Receiver, index }
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.side, self.index)
    }
}

/// One eligible proposer/receiver pair with its like rate (proposer to
/// receiver) and relike rate (receiver back to proposer).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub proposer: u32,
    pub receiver: u32,
    pub like: f64,
    pub relike: f64,
}

/// Which rate a validation message refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateField {
    ProposerLogin,
    ReceiverLogin,
    Like,
    Relike,
}

impl fmt::Display for RateField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateField::ProposerLogin => "lambda_p",
            RateField::ReceiverLogin => "lambda_r",
            RateField::Like => "alpha",
            RateField::Relike => "beta",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptySide(Side),
    LoginOutOfRange { user: UserId, value: f64 },
    PairRateOutOfRange { proposer: u32, receiver: u32, field: RateField, value: f64 },
    DuplicatePair { proposer: u32, receiver: u32 },
    UnknownUser { user: UserId, proposer: u32, receiver: u32 },
    CapacityBelowOne { proposer: u32, value: u32 },
    CapacityLength { expected: usize, found: usize },
    InconsistentLogin { user: UserId, first: f64, other: f64 },
    TooManyPairs(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySide(side) => write!(f, "market has no {side}s"),
            Violation::LoginOutOfRange { user, value } => {
                write!(f, "{user}: login rate {value} outside [0,1]")
            }
            Violation::PairRateOutOfRange { proposer, receiver, field, value } => {
                write!(f, "pair ({proposer},{receiver}): {field} = {value} outside [0,1]")
            }
            Violation::DuplicatePair { proposer, receiver } => {
                write!(f, "duplicate pair ({proposer},{receiver})")
            }
            Violation::UnknownUser { user, proposer, receiver } => {
                write!(f, "pair ({proposer},{receiver}) references unknown {user}")
            }
            Violation::CapacityBelowOne { proposer, value } => {
                write!(f, "proposer {proposer}: cognitive capacity {value} < 1")
            }
            Violation::CapacityLength { expected, found } => {
                write!(f, "expected {expected} capacities, found {found}")
            }
            Violation::InconsistentLogin { user, first, other } => {
                write!(f, "{user}: inconsistent login rates {first} and {other}")
            }
            Violation::TooManyPairs(n) => write!(f, "{n} pairs exceeds the supported maximum"),
        }
    }
}

/// Every violation found while validating a market.
#[derive(Clone, Debug, PartialEq, Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation error(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

impl ValidationError {
    pub fn single(v: Violation) -> Self {
        Self { violations: vec![v] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Error)]
#[error("{field} = {value} is not a probability")]
pub struct DomainError {
    pub field: RateField,
    pub value: f64,
}

fn is_probability(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Probability that a shown pair turns into a date: `((λ_i·α)·λ_j)·β`.
///
/// The multiplication order is fixed so that sort keys are identical on every
/// platform.
pub fn dating_rate(
    proposer_login: f64,
    like: f64,
    receiver_login: f64,
    relike: f64,
) -> Result<f64, DomainError> {
    for (field, value) in [
        (RateField::ProposerLogin, proposer_login),
        (RateField::Like, like),
        (RateField::ReceiverLogin, receiver_login),
        (RateField::Relike, relike),
    ] {
        if !is_probability(value) {
            return Err(DomainError { field, value });
        }
    }
    Ok(((proposer_login * like) * receiver_login) * relike)
}

/// Unvalidated market input. Pairs may come in any order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawMarket {
    pub proposer_login: Vec<f64>,
    pub receiver_login: Vec<f64>,
    pub pairs: Vec<Pair>,
    pub capacity: Vec<u32>,
}

/// A validated market. Pairs are stored sorted by `(proposer, receiver)`, so
/// a pair's position doubles as the final tie-break key and each proposer's
/// pairs form a contiguous block.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketInstance {
    proposer_login: Vec<f64>,
    receiver_login: Vec<f64>,
    pairs: Vec<Pair>,
    capacity: Vec<u32>,
    row_start: Vec<usize>,
}

/// Checks every market invariant and reports all violations at once.
pub fn validate_market(raw: RawMarket) -> Result<MarketInstance, ValidationError> {
    let mut violations = Vec::new();
    let n_prop = raw.proposer_login.len();
    let n_recv = raw.receiver_login.len();
    if n_prop == 0 {
        violations.push(Violation::EmptySide(Side::Proposer));
    }
    if n_recv == 0 {
        violations.push(Violation::EmptySide(Side::Receiver));
    }
    if raw.pairs.len() >= u32::MAX as usize {
        violations.push(Violation::TooManyPairs(raw.pairs.len()));
    }
    for (i, &value) in raw.proposer_login.iter().enumerate() {
        if !is_probability(value) {
            violations.push(Violation::LoginOutOfRange { user: UserId::proposer(i as u32), value });
        }
    }
    for (j, &value) in raw.receiver_login.iter().enumerate() {
        if !is_probability(value) {
            violations.push(Violation::LoginOutOfRange { user: UserId::receiver(j as u32), value });
        }
    }
    if raw.capacity.len() != n_prop {
        violations.push(Violation::CapacityLength { expected: n_prop, found: raw.capacity.len() });
    }
    for (i, &value) in raw.capacity.iter().enumerate() {
        if value < 1 {
            violations.push(Violation::CapacityBelowOne { proposer: i as u32, value });
        }
    }

    for p in &raw.pairs {
        if p.proposer as usize >= n_prop {
            violations.push(Violation::UnknownUser {
                user: UserId::proposer(p.proposer),
                proposer: p.proposer,
                receiver: p.receiver,
            });
        }
        if p.receiver as usize >= n_recv {
            violations.push(Violation::UnknownUser {
                user: UserId::receiver(p.receiver),
                proposer: p.proposer,
                receiver: p.receiver,
            });
        }
        for (field, value) in [(RateField::Like, p.like), (RateField::Relike, p.relike)] {
            if !is_probability(value) {
                violations.push(Violation::PairRateOutOfRange {
                    proposer: p.proposer,
                    receiver: p.receiver,
                    field,
                    value,
                });
            }
        }
    }

    let mut pairs = raw.pairs;
    pairs.sort_by_key(|p| (p.proposer, p.receiver));
    for w in pairs.windows(2) {
        if (w[0].proposer, w[0].receiver) == (w[1].proposer, w[1].receiver) {
            let dup = Violation::DuplicatePair { proposer: w[1].proposer, receiver: w[1].receiver };
            if violations.last() != Some(&dup) {
                violations.push(dup);
            }
        }
    }

    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }

    let mut row_start = vec![0usize; n_prop + 1];
    for p in &pairs {
        row_start[p.proposer as usize + 1] += 1;
    }
    for i in 0..n_prop {
        row_start[i + 1] += row_start[i];
    }
    Ok(MarketInstance {
        proposer_login: raw.proposer_login,
        receiver_login: raw.receiver_login,
        pairs,
        capacity: raw.capacity,
        row_start,
    })
}

impl MarketInstance {
    pub fn n_proposers(&self) -> usize {
        self.proposer_login.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receiver_login.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn pair(&self, idx: usize) -> &Pair {
        &self.pairs[idx]
    }

    pub fn proposer_login(&self) -> &[f64] {
        &self.proposer_login
    }

    pub fn receiver_login(&self) -> &[f64] {
        &self.receiver_login
    }

    pub fn capacity(&self) -> &[u32] {
        &self.capacity
    }

    /// Pair indices belonging to proposer `i`, ascending in receiver index.
    pub fn row(&self, i: usize) -> Range<usize> {
        self.row_start[i]..self.row_start[i + 1]
    }

    pub fn pair_index(&self, proposer: u32, receiver: u32) -> Option<usize> {
        let range = self.row(proposer as usize);
        self.pairs[range.clone()]
            .binary_search_by_key(&receiver, |p| p.receiver)
            .ok()
            .map(|k| range.start + k)
    }

    /// Dating rate of the pair at `idx`.
    #[inline]
    pub fn delta(&self, idx: usize) -> f64 {
        let p = &self.pairs[idx];
        ((self.proposer_login[p.proposer as usize] * p.like) * self.receiver_login[p.receiver as usize])
            * p.relike
    }

    /// Expected likes sent through the pair when shown: `λ_i·α_ij`.
    #[inline]
    pub fn like_exposure(&self, idx: usize) -> f64 {
        let p = &self.pairs[idx];
        self.proposer_login[p.proposer as usize] * p.like
    }

    /// Pair indices grouped by receiver; within a receiver, ascending proposer.
    pub fn receiver_columns(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.n_receivers()];
        for (idx, p) in self.pairs.iter().enumerate() {
            cols[p.receiver as usize].push(idx);
        }
        cols
    }

    pub fn into_raw(self) -> RawMarket {
        RawMarket {
            proposer_login: self.proposer_login,
            receiver_login: self.receiver_login,
            pairs: self.pairs,
            capacity: self.capacity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SortKind {
    #[serde(rename = "like")]
    LikeSort,
    #[serde(rename = "date")]
    DateSort,
}

impl fmt::Display for SortKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SortKind::LikeSort => "like",
            SortKind::DateSort => "date",
        })
    }
}

impl FromStr for SortKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "like" | "likesort" | "like-sort" | "like_sort" => Ok(SortKind::LikeSort),
            "date" | "datesort" | "date-sort" | "date_sort" => Ok(SortKind::DateSort),
            other => Err(format!("unknown sort kind `{other}` (expected `like` or `date`)")),
        }
    }
}

/// Strict preference orderings for both sides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankOrderLists {
    kind: SortKind,
    proposer: Vec<Vec<u32>>,
    receiver: Vec<Vec<u32>>,
}

impl RankOrderLists {
    pub fn sort_kind(&self) -> SortKind {
        self.kind
    }

    /// Receivers in proposer `i`'s order, most preferred first.
    pub fn proposer_list(&self, i: usize) -> &[u32] {
        &self.proposer[i]
    }

    /// Proposers in receiver `j`'s order, most preferred first.
    pub fn receiver_list(&self, j: usize) -> &[u32] {
        &self.receiver[j]
    }

    pub fn proposer_lists(&self) -> &[Vec<u32>] {
        &self.proposer
    }

    pub fn receiver_lists(&self) -> &[Vec<u32>] {
        &self.receiver
    }
}

/// Descending key, ties by ascending counterpart index.
fn rank_order(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

pub fn build_rols(market: &MarketInstance, kind: SortKind) -> RankOrderLists {
    type Key = fn(&MarketInstance, usize) -> f64;
    let (proposer_key, receiver_key): (Key, Key) =
        match kind {
            SortKind::LikeSort => (|m, k| m.pairs[k].like, |m, k| m.pairs[k].relike),
            SortKind::DateSort => (MarketInstance::delta, MarketInstance::delta),
        };

    let proposer = (0..market.n_proposers())
        .map(|i| {
            let mut keyed: Vec<(f64, u32)> = market
                .row(i)
                .map(|k| (proposer_key(market, k), market.pairs[k].receiver))
                .collect();
            keyed.sort_by(rank_order);
            keyed.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut keyed_cols: Vec<Vec<(f64, u32)>> = vec![Vec::new(); market.n_receivers()];
    for (k, p) in market.pairs.iter().enumerate() {
        keyed_cols[p.receiver as usize].push((receiver_key(market, k), p.proposer));
    }
    let receiver = keyed_cols
        .into_iter()
        .map(|mut keyed| {
            keyed.sort_by(rank_order);
            keyed.into_iter().map(|(_, i)| i).collect()
        })
        .collect();

    RankOrderLists { kind, proposer, receiver }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn pair(proposer: u32, receiver: u32, like: f64, relike: f64) -> Pair {
        Pair { proposer, receiver, like, relike }
    }

    fn two_by_two() -> RawMarket {
        RawMarket {
            proposer_login: vec![1.0, 0.5],
            receiver_login: vec![0.8, 0.9],
            pairs: vec![
                pair(0, 0, 0.5, 0.5),
                pair(0, 1, 0.4, 0.6),
                pair(1, 0, 0.3, 0.2),
                pair(1, 1, 0.9, 0.1),
            ],
            capacity: vec![1, 2],
        }
    }

    #[test]
    fn dating_rate_examples() {
        assert_eq!(dating_rate(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(dating_rate(0.0, 0.9, 0.9, 0.9).unwrap(), 0.0);
        // 0.5·0.4 = 0.2, ·0.8 = 0.16, ·0.25 = 0.04
        assert!((dating_rate(0.5, 0.4, 0.8, 0.25).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn dating_rate_rejects_bad_input() {
        let err = dating_rate(0.5, 1.2, 0.5, 0.5).unwrap_err();
        assert_eq!(err.field, RateField::Like);
        assert!(dating_rate(f64::NAN, 0.5, 0.5, 0.5).is_err());
        assert!(dating_rate(0.5, 0.5, -0.1, 0.5).is_err());
    }

    #[test]
    fn valid_market_round_trips() {
        let raw = two_by_two();
        let m = validate_market(raw.clone()).unwrap();
        assert_eq!(m.into_raw(), raw);
    }

    #[test]
    fn reports_out_of_range_pair_rate() {
        let mut raw = two_by_two();
        raw.pairs[1].like = 1.2;
        let err = validate_market(raw).unwrap_err();
        assert_eq!(
            err.violations,
            vec![Violation::PairRateOutOfRange {
                proposer: 0,
                receiver: 1,
                field: RateField::Like,
                value: 1.2
            }]
        );
        assert!(err.to_string().contains("pair (0,1): alpha = 1.2"));
    }

    #[test]
    fn reports_duplicates_and_collects_everything() {
        let mut raw = two_by_two();
        raw.pairs.push(pair(0, 0, 0.1, 0.1));
        raw.capacity[1] = 0;
        raw.receiver_login[0] = -0.5;
        let err = validate_market(raw).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("duplicate pair (0,0)"), "{text}");
        assert!(text.contains("capacity 0 < 1"), "{text}");
        assert!(text.contains("receiver 0: login rate -0.5"), "{text}");
        assert_eq!(err.violations.len(), 3);
    }

    #[test]
    fn reports_empty_sides_and_unknown_users() {
        let err = validate_market(RawMarket::default()).unwrap_err();
        assert!(err.violations.contains(&Violation::EmptySide(Side::Proposer)));
        assert!(err.violations.contains(&Violation::EmptySide(Side::Receiver)));

        let mut raw = two_by_two();
        raw.pairs.push(pair(0, 7, 0.1, 0.1));
        let err = validate_market(raw).unwrap_err();
        assert!(matches!(err.violations[0], Violation::UnknownUser { .. }));
    }

    #[test]
    fn pairs_are_canonicalised() {
        let mut raw = two_by_two();
        raw.pairs.reverse();
        let m = validate_market(raw).unwrap();
        let order: Vec<_> = m.pairs().iter().map(|p| (p.proposer, p.receiver)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(m.pair_index(1, 0), Some(2));
        assert_eq!(m.row(1), 2..4);
    }

    #[test]
    fn like_sort_two_element() {
        let raw = RawMarket {
            proposer_login: vec![1.0],
            receiver_login: vec![1.0, 1.0],
            pairs: vec![pair(0, 0, 0.9, 0.5), pair(0, 1, 0.1, 0.5)],
            capacity: vec![1],
        };
        let rols = build_rols(&validate_market(raw).unwrap(), SortKind::LikeSort);
        assert_eq!(rols.proposer_list(0), &[0, 1]);
    }

    #[test]
    fn like_and_date_sort_diverge() {
        // δ = (0.9·0.1, 0.5·0.9) = (0.09, 0.45)
        let raw = RawMarket {
            proposer_login: vec![1.0],
            receiver_login: vec![1.0, 1.0],
            pairs: vec![pair(0, 0, 0.9, 0.1), pair(0, 1, 0.5, 0.9)],
            capacity: vec![1],
        };
        let m = validate_market(raw).unwrap();
        assert_eq!(build_rols(&m, SortKind::LikeSort).proposer_list(0), &[0, 1]);
        assert_eq!(build_rols(&m, SortKind::DateSort).proposer_list(0), &[1, 0]);
    }

    #[test]
    fn total_tie_orders_by_index() {
        let raw = RawMarket {
            proposer_login: vec![1.0, 1.0, 1.0],
            receiver_login: vec![1.0; 4],
            pairs: (0..3)
                .flat_map(|i| [3, 1, 0, 2].map(|j| pair(i, j, 0.3, 0.3)))
                .collect(),
            capacity: vec![1; 3],
        };
        let m = validate_market(raw).unwrap();
        for kind in [SortKind::LikeSort, SortKind::DateSort] {
            let rols = build_rols(&m, kind);
            assert_eq!(rols.proposer_list(1), &[0, 1, 2, 3]);
            assert_eq!(rols.receiver_list(2), &[0, 1, 2]);
        }
    }

    #[test]
    fn sparse_eligibility_excludes_missing_pairs() {
        let raw = RawMarket {
            proposer_login: vec![1.0, 1.0],
            receiver_login: vec![1.0, 1.0],
            pairs: vec![pair(0, 1, 0.3, 0.3), pair(1, 1, 0.2, 0.3)],
            capacity: vec![2, 2],
        };
        let rols = build_rols(&validate_market(raw).unwrap(), SortKind::DateSort);
        assert_eq!(rols.proposer_list(0), &[1]);
        assert!(rols.receiver_list(0).is_empty());
        assert_eq!(rols.receiver_list(1), &[0, 1]);
    }
}
