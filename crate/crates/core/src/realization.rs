//! Monte Carlo realization of the recommendation → login → like → relike
//! funnel, and the realized outcome metrics computed from one day of events.
//!
//! Random numbers come from ChaCha8, a counter-based generator. Each day has
//! key `seed + day`; every entity reads from its own stream of that key:
//!
//! | stream                      | words read (one `f64` each, in order)        |
//! |-----------------------------|----------------------------------------------|
//! | `1 << 56 \| proposer`       | login                                        |
//! | `2 << 56 \| receiver`       | login                                        |
//! | `3 << 56 \| pair index`     | shown, like, relike, proposer login, receiver login |
//!
//! The last two pair draws are only used with [`LoginMode::PerPair`]. All
//! draws are taken whether or not the funnel reaches them, so a log does not
//! depend on evaluation order or thread count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::integrators::{MatrixError, RecommendationMatrix};
use crate::market::MarketInstance;

const STREAM_PROPOSER: u64 = 1 << 56;
const STREAM_RECEIVER: u64 = 2 << 56;
const STREAM_PAIR: u64 = 3 << 56;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RealizationError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("monte carlo needs at least one day")]
    NoDays,
}

/// How logins are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LoginMode {
    /// One draw per user per day, shared by all of the user's pairs.
    #[default]
    UserLevel,
    /// Independent draws per pair, matching the product formulas of the
    /// expected dating probabilities exactly.
    PerPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairEvent {
    pub proposer: u32,
    pub receiver: u32,
    pub shown: bool,
    pub proposer_login: bool,
    pub liked: bool,
    pub receiver_login: bool,
    pub reliked: bool,
}

impl PairEvent {
    pub fn dated(&self) -> bool {
        self.liked && self.reliked
    }
}

/// One simulated day: an event row for every pair with `M_ij > 0`, in
/// `(proposer, receiver)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub day: u64,
    pub seed: u64,
    pub n_proposers: usize,
    pub n_receivers: usize,
    pub events: Vec<PairEvent>,
}

struct DayStreams {
    key: <ChaCha8Rng as SeedableRng>::Seed,
}

impl DayStreams {
    fn new(seed: u64, day: u64) -> Self {
        Self { key: ChaCha8Rng::seed_from_u64(seed.wrapping_add(day)).get_seed() }
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(id);
        rng
    }

    fn bernoulli(&self, id: u64, p: f64) -> bool {
        self.stream(id).random::<f64>() < p
    }
}

pub fn simulate_day(
    m: &RecommendationMatrix,
    market: &MarketInstance,
    seed: u64,
    day: u64,
    mode: LoginMode,
) -> Result<EventLog, RealizationError> {
    let entries = m.pair_entries(market)?;
    let streams = DayStreams::new(seed, day);
    let proposer_login: Vec<bool> = market
        .proposer_login()
        .iter()
        .enumerate()
        .map(|(i, &l)| streams.bernoulli(STREAM_PROPOSER | i as u64, l))
        .collect();
    let receiver_login: Vec<bool> = market
        .receiver_login()
        .iter()
        .enumerate()
        .map(|(j, &l)| streams.bernoulli(STREAM_RECEIVER | j as u64, l))
        .collect();

    let events = entries
        .iter()
        .map(|&(idx, value)| {
            let p = market.pair(idx);
            let (i, j) = (p.proposer as usize, p.receiver as usize);
            let mut rng = streams.stream(STREAM_PAIR | idx as u64);
            let u: [f64; 5] = std::array::from_fn(|_| rng.random::<f64>());
            let (p_login, r_login) = match mode {
                LoginMode::UserLevel => (proposer_login[i], receiver_login[j]),
                LoginMode::PerPair => {
                    (u[3] < market.proposer_login()[i], u[4] < market.receiver_login()[j])
                }
            };
            let shown = u[0] < value;
            let liked = shown && p_login && u[1] < p.like;
            let reliked = liked && r_login && u[2] < p.relike;
            PairEvent {
                proposer: p.proposer,
                receiver: p.receiver,
                shown,
                proposer_login: p_login,
                liked,
                receiver_login: r_login,
                reliked,
            }
        })
        .collect();

    Ok(EventLog {
        day,
        seed,
        n_proposers: market.n_proposers(),
        n_receivers: market.n_receivers(),
        events,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealizedReport {
    pub avg_dates: f64,
    pub avg_effective_dates: f64,
    pub dating_prob_proposer: f64,
    pub dating_prob_receiver: f64,
    pub avg_likes_receiver: f64,
    pub avg_likes_proposer: f64,
    pub receivers_with_date: usize,
    /// Effective-date credit per proposer, `Σ_j 1{date}/#dates_j`.
    pub effective_by_proposer: Vec<f64>,
    /// Credits of size `1/n` handed out, keyed by `n`.
    pub unit_credits: BTreeMap<u32, u64>,
    pub receiver_dates: Vec<u32>,
    pub receiver_likes: Vec<u32>,
}

impl RealizedReport {
    /// Total effective dates over all proposers, summed per credit size so
    /// the total is an exact integer.
    pub fn effective_total(&self) -> f64 {
        self.unit_credits
            .iter()
            .map(|(&n, &count)| {
                let n = n as u64;
                if count % n == 0 {
                    (count / n) as f64
                } else {
                    count as f64 / n as f64
                }
            })
            .sum()
    }
}

pub fn realized_metrics(log: &EventLog) -> RealizedReport {
    let n_prop = log.n_proposers;
    let n_recv = log.n_receivers;
    let mut receiver_dates = vec![0u32; n_recv];
    let mut receiver_likes = vec![0u32; n_recv];
    let mut proposer_dates = vec![0u32; n_prop];
    let mut likes = 0u64;
    let mut dates = 0u64;
    for e in &log.events {
        if e.liked {
            likes += 1;
            receiver_likes[e.receiver as usize] += 1;
        }
        if e.dated() {
            dates += 1;
            receiver_dates[e.receiver as usize] += 1;
            proposer_dates[e.proposer as usize] += 1;
        }
    }

    let mut effective_by_proposer = vec![0.0; n_prop];
    let mut unit_credits = BTreeMap::new();
    for e in log.events.iter().filter(|e| e.dated()) {
        let n = receiver_dates[e.receiver as usize];
        effective_by_proposer[e.proposer as usize] += 1.0 / n as f64;
        *unit_credits.entry(n).or_insert(0u64) += 1;
    }

    let receivers_with_date = receiver_dates.iter().filter(|&&n| n > 0).count();
    let proposers_with_date = proposer_dates.iter().filter(|&&n| n > 0).count();
    let mut report = RealizedReport {
        avg_dates: dates as f64 / n_prop as f64,
        avg_effective_dates: 0.0,
        dating_prob_proposer: proposers_with_date as f64 / n_prop as f64,
        dating_prob_receiver: receivers_with_date as f64 / n_recv as f64,
        avg_likes_receiver: likes as f64 / n_recv as f64,
        avg_likes_proposer: likes as f64 / n_prop as f64,
        receivers_with_date,
        effective_by_proposer,
        unit_credits,
        receiver_dates,
        receiver_likes,
    };
    report.avg_effective_dates = report.effective_total() / n_prop as f64;
    report
}

/// The five headline realized indicators.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RealizedStats {
    pub avg_dates: f64,
    pub avg_effective_dates: f64,
    pub dating_prob_proposer: f64,
    pub dating_prob_receiver: f64,
    pub avg_likes_receiver: f64,
}

impl RealizedStats {
    /// Column names, shared with the expected-metrics report.
    pub const NAMES: [&'static str; 5] = [
        "avg_dates_proposer",
        "avg_effective_dates",
        "dating_prob_proposer",
        "dating_prob_receiver",
        "avg_likes_receiver",
    ];

    pub fn to_array(self) -> [f64; 5] {
        [
            self.avg_dates,
            self.avg_effective_dates,
            self.dating_prob_proposer,
            self.dating_prob_receiver,
            self.avg_likes_receiver,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            avg_dates: a[0],
            avg_effective_dates: a[1],
            dating_prob_proposer: a[2],
            dating_prob_receiver: a[3],
            avg_likes_receiver: a[4],
        }
    }
}

impl From<&RealizedReport> for RealizedStats {
    fn from(r: &RealizedReport) -> Self {
        Self {
            avg_dates: r.avg_dates,
            avg_effective_dates: r.avg_effective_dates,
            dating_prob_proposer: r.dating_prob_proposer,
            dating_prob_receiver: r.dating_prob_receiver,
            avg_likes_receiver: r.avg_likes_receiver,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloReport {
    pub n_days: u64,
    pub mean: RealizedStats,
    /// Standard error of the mean; zero for a single day.
    pub se: RealizedStats,
}

/// Runs days `0..n_days` (day `d` keyed by `seed + d`) and aggregates.
pub fn monte_carlo(
    m: &RecommendationMatrix,
    market: &MarketInstance,
    n_days: u64,
    seed: u64,
    mode: LoginMode,
) -> Result<MonteCarloReport, RealizationError> {
    if n_days == 0 {
        return Err(RealizationError::NoDays);
    }
    m.pair_entries(market)?;
    let days: Vec<[f64; 5]> = (0..n_days)
        .into_par_iter()
        .map(|day| {
            let log = simulate_day(m, market, seed, day, mode).expect("matrix checked above");
            RealizedStats::from(&realized_metrics(&log)).to_array()
        })
        .collect();

    let n = n_days as f64;
    let mut mean = [0.0; 5];
    for d in &days {
        for k in 0..5 {
            mean[k] += d[k];
        }
    }
    mean.iter_mut().for_each(|x| *x /= n);
    let mut se = [0.0; 5];
    if n_days > 1 {
        for d in &days {
            for k in 0..5 {
                se[k] += (d[k] - mean[k]).powi(2);
            }
        }
        se.iter_mut().for_each(|x| *x = (*x / (n - 1.0)).sqrt() / n.sqrt());
    }
    Ok(MonteCarloReport {
        n_days,
        mean: RealizedStats::from_array(mean),
        se: RealizedStats::from_array(se),
    })
}
