//! Synthetic markets drawn from a binned joint distribution of user rates.
//!
//! A proposer profile is `(λ_i, α-level)` and a receiver profile is
//! `(λ_j, β-level)`; each is drawn from its side's histogram and placed at the
//! cell midpoint.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{validate_market, MarketInstance, Pair, RawMarket, ValidationError};

const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bin width {0} does not divide [0,1] evenly")]
    BinWidth(f64),
    #[error("{side} side of the distribution has no cells")]
    EmptySide { side: &'static str },
    #[error("{side} cell ({lambda_lo}, {other_lo}) is not on the {width} grid")]
    OffGrid { side: &'static str, lambda_lo: f64, other_lo: f64, width: f64 },
    #[error("{side} cell weight {weight} is negative or not finite")]
    BadWeight { side: &'static str, weight: f64 },
    #[error("{side} cell weights sum to {sum}, not 1")]
    Unnormalized { side: &'static str, sum: f64 },
    #[error("sample ({0}, {1}) outside [0,1]")]
    SampleOutOfRange(f64, f64),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("noise scale {0} must be finite and nonnegative")]
    BadNoise(f64),
    #[error(transparent)]
    Market(#[from] ValidationError),
}

/// One histogram cell, serialized as `[lambda_lo, other_lo, weight]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct RateCell {
    pub lambda_lo: f64,
    pub other_lo: f64,
    pub weight: f64,
}

impl From<[f64; 3]> for RateCell {
    fn from(a: [f64; 3]) -> Self {
        Self { lambda_lo: a[0], other_lo: a[1], weight: a[2] }
    }
}

impl From<RateCell> for [f64; 3] {
    fn from(c: RateCell) -> Self {
        [c.lambda_lo, c.other_lo, c.weight]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDistribution {
    pub bin_width: f64,
    pub proposer_cells: Vec<RateCell>,
    pub receiver_cells: Vec<RateCell>,
}

fn bin_count(width: f64) -> Result<usize, SynthError> {
    if !(width > 0.0 && width <= 1.0) {
        return Err(SynthError::BinWidth(width));
    }
    let n = (1.0 / width).round();
    if (n * width - 1.0).abs() > GRID_EPS {
        return Err(SynthError::BinWidth(width));
    }
    Ok(n as usize)
}

fn bin_of(x: f64, n: usize) -> usize {
    ((x * n as f64 + GRID_EPS).floor() as usize).min(n - 1)
}

fn bin_side(samples: &[(f64, f64)], n: usize) -> Result<Vec<RateCell>, SynthError> {
    let mut counts = vec![0u64; n * n];
    for &(a, b) in samples {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return Err(SynthError::SampleOutOfRange(a, b));
        }
        counts[bin_of(a, n) * n + bin_of(b, n)] += 1;
    }
    let total = samples.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| RateCell {
            lambda_lo: (k / n) as f64 / n as f64,
            other_lo: (k % n) as f64 / n as f64,
            weight: c as f64 / total,
        })
        .collect())
}

/// Histograms per-user `(λ, α)` and `(λ, β)` samples. Empty cells are left
/// out; a side with no samples has no cells.
pub fn bin_distribution(
    proposers: &[(f64, f64)],
    receivers: &[(f64, f64)],
    width: f64,
) -> Result<RateDistribution, SynthError> {
    let n = bin_count(width)?;
    Ok(RateDistribution {
        bin_width: width,
        proposer_cells: bin_side(proposers, n)?,
        receiver_cells: bin_side(receivers, n)?,
    })
}

/// Cell midpoints and weights of one side, checked against the grid.
struct SideTable {
    profiles: Vec<(f64, f64)>,
    index: WeightedIndex<f64>,
}

fn side_table(cells: &[RateCell], n: usize, side: &'static str) -> Result<SideTable, SynthError> {
    if cells.is_empty() {
        return Err(SynthError::EmptySide { side });
    }
    let width = 1.0 / n as f64;
    let mut profiles = Vec::with_capacity(cells.len());
    let mut sum = 0.0;
    for c in cells {
        let on_grid = |x: f64| {
            let k = (x * n as f64).round();
            (0.0..n as f64).contains(&k) && (x * n as f64 - k).abs() < 1e-6
        };
        if !on_grid(c.lambda_lo) || !on_grid(c.other_lo) {
            return Err(SynthError::OffGrid {
                side,
                lambda_lo: c.lambda_lo,
                other_lo: c.other_lo,
                width,
            });
        }
        if !(c.weight >= 0.0 && c.weight.is_finite()) {
            return Err(SynthError::BadWeight { side, weight: c.weight });
        }
        sum += c.weight;
        let mid = |x: f64| ((x * n as f64).round() + 0.5) / n as f64;
        profiles.push((mid(c.lambda_lo), mid(c.other_lo)));
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(SynthError::Unnormalized { side, sum });
    }
    let index = WeightedIndex::new(cells.iter().map(|c| c.weight))
        .map_err(|_| SynthError::Unnormalized { side, sum })?;
    Ok(SideTable { profiles, index })
}

impl RateDistribution {
    pub fn validate(&self) -> Result<(), SynthError> {
        let n = bin_count(self.bin_width)?;
        side_table(&self.proposer_cells, n, "proposer")?;
        side_table(&self.receiver_cells, n, "receiver")?;
        Ok(())
    }
}

/// How pairwise like and relike rates are formed from user levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PairRateMode {
    /// `α_ij = α_i`, `β_ij = β_j`.
    #[default]
    UserLevel,
    /// `α_ij = σ(logit(α_i) + sigma·z)` with independent standard normal `z`,
    /// likewise for `β_ij`.
    LogitNoise { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_proposers: usize,
    pub n_receivers: usize,
    pub capacity: u32,
    pub seed: u64,
    pub n_datasets: usize,
    pub pair_rates: PairRateMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_proposers: 1000,
            n_receivers: 1000,
            capacity: 25,
            seed: 0,
            n_datasets: 10,
            pair_rates: PairRateMode::UserLevel,
        }
    }
}

impl SynthConfig {
    pub fn empirical() -> Self {
        Self { n_proposers: 8000, n_receivers: 5000, capacity: 65, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_proposers == 0 {
            return Err(SynthError::NonPositive("n_proposers"));
        }
        if self.n_receivers == 0 {
            return Err(SynthError::NonPositive("n_receivers"));
        }
        if self.capacity == 0 {
            return Err(SynthError::NonPositive("capacity"));
        }
        if self.n_datasets == 0 {
            return Err(SynthError::NonPositive("n_datasets"));
        }
        if let PairRateMode::LogitNoise { sigma } = self.pair_rates {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(SynthError::BadNoise(sigma));
            }
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws one dense market with the config's own seed.
///
/// User profiles come from stream 0 of the seed; noise for proposer `i`'s
/// row comes from stream `i + 1`, so rows can be filled in parallel.
pub fn sample_market(dist: &RateDistribution, cfg: &SynthConfig) -> Result<MarketInstance, SynthError> {
    cfg.validate()?;
    let n = bin_count(dist.bin_width)?;
    let prop = side_table(&dist.proposer_cells, n, "proposer")?;
    let recv = side_table(&dist.receiver_cells, n, "receiver")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proposers: Vec<(f64, f64)> =
        (0..cfg.n_proposers).map(|_| prop.profiles[prop.index.sample(&mut rng)]).collect();
    let receivers: Vec<(f64, f64)> =
        (0..cfg.n_receivers).map(|_| recv.profiles[recv.index.sample(&mut rng)]).collect();

    let n_recv = cfg.n_receivers;
    let mut pairs = vec![Pair { proposer: 0, receiver: 0, like: 0.0, relike: 0.0 }; cfg.n_proposers * n_recv];
    pairs.par_chunks_mut(n_recv).enumerate().for_each(|(i, row)| {
        let alpha = proposers[i].1;
        match cfg.pair_rates {
            PairRateMode::UserLevel => {
                for (j, p) in row.iter_mut().enumerate() {
                    *p = Pair { proposer: i as u32, receiver: j as u32, like: alpha, relike: receivers[j].1 };
                }
            }
            PairRateMode::LogitNoise { sigma } => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64 + 1);
                let base = logit(alpha);
                for (j, p) in row.iter_mut().enumerate() {
                    let za: f64 = rng.sample(StandardNormal);
                    let zb: f64 = rng.sample(StandardNormal);
                    *p = Pair {
                        proposer: i as u32,
                        receiver: j as u32,
                        like: sigmoid(base + sigma * za).clamp(0.0, 1.0),
                        relike: sigmoid(logit(receivers[j].1) + sigma * zb).clamp(0.0, 1.0),
                    };
                }
            }
        }
    });

    Ok(validate_market(RawMarket {
        proposer_login: proposers.iter().map(|p| p.0).collect(),
        receiver_login: receivers.iter().map(|r| r.0).collect(),
        pairs,
        capacity: vec![cfg.capacity; cfg.n_proposers],
    })?)
}

/// Dataset `k` (1-based) is drawn with seed `cfg.seed + k`.
pub fn dataset_config(cfg: &SynthConfig, k: usize) -> SynthConfig {
    SynthConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() }
}

/// Parametric recipe for the shipped example distribution: independent Beta
/// marginals per rate, sampled and binned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaRecipe {
    pub proposer_login: (f64, f64),
    pub like: (f64, f64),
    pub receiver_login: (f64, f64),
    pub relike: (f64, f64),
    pub n_samples: usize,
    pub seed: u64,
    pub bin_width: f64,
}

impl Default for BetaRecipe {
    fn default() -> Self {
        Self {
            proposer_login: (2.0, 5.0),
            like: (1.5, 6.0),
            receiver_login: (2.0, 3.0),
            relike: (1.5, 5.0),
            n_samples: 100_000,
            seed: 20_240_101,
            bin_width: 0.1,
        }
    }
}

pub fn recipe_distribution(recipe: &BetaRecipe) -> Result<RateDistribution, SynthError> {
    let beta = |(a, b): (f64, f64)| Beta::new(a, b).map_err(|_| SynthError::NonPositive("beta shape"));
    let (pl, lk, rl, rk) =
        (beta(recipe.proposer_login)?, beta(recipe.like)?, beta(recipe.receiver_login)?, beta(recipe.relike)?);
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let proposers: Vec<(f64, f64)> =
        (0..recipe.n_samples).map(|_| (pl.sample(&mut rng), lk.sample(&mut rng))).collect();
    let receivers: Vec<(f64, f64)> =
        (0..recipe.n_samples).map(|_| (rl.sample(&mut rng), rk.sample(&mut rng))).collect();
    bin_distribution(&proposers, &receivers, recipe.bin_width)
}
