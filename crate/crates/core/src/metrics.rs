//! Expected performance indicators of a recommendation matrix.
//!
//! Receiver congestion is priced with the discount `f(μ) = (1 − e^{−μ})/μ`,
//! the expected share of a receiver's attention a single date gets when her
//! date count is Poisson with mean `μ`. The exact Poisson-binomial version is
//! available through [`exact_effective_rates`] for checking the
//! approximation on small markets.

use thiserror::Error;

use crate::integrators::{MatrixError, RecommendationMatrix};
use crate::market::MarketInstance;

/// Default largest probability list the exact oracle accepts.
pub const ORACLE_MAX_LEN: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("oracle input of {len} probabilities exceeds the bound of {bound}")]
    OracleScale { len: usize, bound: usize },
    #[error("{0} is not a probability")]
    NotAProbability(f64),
}

/// Expected number of dates each receiver forms, `μ_j = Σ_i δ_ij·M_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverLoad(pub Vec<f64>);

/// Congestion-discounted dating rate `δ*_ij`, one value per market pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveRates(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub avg_dates_proposer: f64,
    pub avg_dates_receiver: f64,
    pub avg_effective_dates: f64,
    pub dating_prob_proposer: f64,
    pub dating_prob_receiver: f64,
    pub avg_likes_receiver: f64,
    pub avg_likes_proposer: f64,
    pub receiver_load: ReceiverLoad,
    /// Expected likes received, `Σ_i M_ij·λ_i·α_ij`.
    pub receiver_like_load: Vec<f64>,
}

/// `(1 − e^{−μ})/μ`, with its limit 1 at `μ = 0`.
pub fn discount_factor(mu: f64) -> f64 {
    if mu < 1e-8 {
        1.0 - mu / 2.0 + mu * mu / 6.0
    } else {
        -(-mu).exp_m1() / mu
    }
}

pub fn receiver_load(
    m: &RecommendationMatrix,
    market: &MarketInstance,
) -> Result<ReceiverLoad, MetricsError> {
    let mut mu = vec![0.0; market.n_receivers()];
    for (idx, value) in m.pair_entries(market)? {
        mu[market.pair(idx).receiver as usize] += market.delta(idx) * value;
    }
    Ok(ReceiverLoad(mu))
}

pub fn effective_rates(
    m: &RecommendationMatrix,
    market: &MarketInstance,
) -> Result<EffectiveRates, MetricsError> {
    let ReceiverLoad(mu) = receiver_load(m, market)?;
    let factor: Vec<f64> = mu.iter().map(|&x| discount_factor(x)).collect();
    Ok(EffectiveRates(
        (0..market.n_pairs())
            .map(|k| factor[market.pair(k).receiver as usize] * market.delta(k))
            .collect(),
    ))
}

pub fn expected_metrics(
    m: &RecommendationMatrix,
    market: &MarketInstance,
) -> Result<MetricsReport, MetricsError> {
    let entries = m.pair_entries(market)?;
    let n_prop = market.n_proposers();
    let n_recv = market.n_receivers();
    let lp = market.proposer_login();
    let lr = market.receiver_login();

    let mut total_dates = 0.0;
    let mut total_likes = 0.0;
    let mut mu = vec![0.0; n_recv];
    let mut like_load = vec![0.0; n_recv];
    let mut miss_prop = vec![1.0; n_prop];
    let mut miss_recv = vec![1.0; n_recv];
    for &(idx, value) in &entries {
        let p = market.pair(idx);
        let (i, j) = (p.proposer as usize, p.receiver as usize);
        let dates = market.delta(idx) * value;
        let likes = market.like_exposure(idx) * value;
        total_dates += dates;
        total_likes += likes;
        mu[j] += dates;
        like_load[j] += likes;
        miss_prop[i] *= 1.0 - value * lr[j] * p.like * p.relike;
        miss_recv[j] *= 1.0 - value * lp[i] * p.like * p.relike;
    }

    let factor: Vec<f64> = mu.iter().map(|&x| discount_factor(x)).collect();
    let total_effective: f64 = entries
        .iter()
        .map(|&(idx, value)| factor[market.pair(idx).receiver as usize] * market.delta(idx) * value)
        .sum();
    let dating_prob_proposer =
        lp.iter().zip(&miss_prop).map(|(l, miss)| l * (1.0 - miss)).sum::<f64>() / n_prop as f64;
    let dating_prob_receiver =
        lr.iter().zip(&miss_recv).map(|(l, miss)| l * (1.0 - miss)).sum::<f64>() / n_recv as f64;

    Ok(MetricsReport {
        avg_dates_proposer: total_dates / n_prop as f64,
        avg_dates_receiver: total_dates / n_recv as f64,
        avg_effective_dates: total_effective / n_prop as f64,
        dating_prob_proposer,
        dating_prob_receiver,
        avg_likes_receiver: total_likes / n_recv as f64,
        avg_likes_proposer: total_likes / n_prop as f64,
        receiver_load: ReceiverLoad(mu),
        receiver_like_load: like_load,
    })
}

/// Distribution of the number of successes among independent Bernoulli
/// trials, by direct convolution.
pub fn poisson_binomial_pmf(probs: &[f64]) -> Vec<f64> {
    let mut pmf = vec![0.0; probs.len() + 1];
    pmf[0] = 1.0;
    for (n, &p) in probs.iter().enumerate() {
        for k in (1..=n + 1).rev() {
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    pmf
}

/// `E[1/(1+X)]` for `X ~ PoissonBinomial(probs)`.
pub fn exact_expected_inverse(probs: &[f64]) -> Result<f64, MetricsError> {
    exact_expected_inverse_bounded(probs, ORACLE_MAX_LEN)
}

pub fn exact_expected_inverse_bounded(probs: &[f64], bound: usize) -> Result<f64, MetricsError> {
    if probs.len() > bound {
        return Err(MetricsError::OracleScale { len: probs.len(), bound });
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MetricsError::NotAProbability(p));
    }
    Ok(poisson_binomial_pmf(probs)
        .iter()
        .enumerate()
        .map(|(k, pk)| pk / (k + 1) as f64)
        .sum())
}

/// Exact effective dating rate `δ†_ij = δ_ij·E[1/(1 + X_{j,−i})]` per pair,
/// where `X_{j,−i}` counts dates receiver `j` forms with other proposers.
pub fn exact_effective_rates(
    m: &RecommendationMatrix,
    market: &MarketInstance,
) -> Result<Vec<f64>, MetricsError> {
    exact_effective_rates_bounded(m, market, ORACLE_MAX_LEN)
}

pub fn exact_effective_rates_bounded(
    m: &RecommendationMatrix,
    market: &MarketInstance,
    bound: usize,
) -> Result<Vec<f64>, MetricsError> {
    let values = m.to_pair_values(market)?;
    let mut out = vec![0.0; market.n_pairs()];
    for column in market.receiver_columns() {
        let active: Vec<(usize, f64)> = column
            .iter()
            .filter(|&&k| values[k] > 0.0)
            .map(|&k| (k, market.delta(k) * values[k]))
            .collect();
        if active.len() > bound {
            return Err(MetricsError::OracleScale { len: active.len(), bound });
        }
        let all: Vec<f64> = active.iter().map(|&(_, s)| s).collect();
        let e_all = exact_expected_inverse_bounded(&all, bound)?;
        for &k in &column {
            out[k] = market.delta(k) * e_all;
        }
        for (pos, &(k, _)) in active.iter().enumerate() {
            let others: Vec<f64> = all
                .iter()
                .enumerate()
                .filter(|&(q, _)| q != pos)
                .map(|(_, &s)| s)
                .collect();
            out[k] = market.delta(k) * exact_expected_inverse_bounded(&others, bound)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::Entry;
    use crate::market::tests::pair;
    use crate::market::{validate_market, RawMarket};

    fn entry(proposer: u32, receiver: u32, value: f64) -> Entry {
        Entry { proposer, receiver, value }
    }

    fn two_on_one() -> MarketInstance {
        // δ = 1·0.5·1·1 = 0.5 for both pairs
        validate_market(RawMarket {
            proposer_login: vec![1.0, 1.0],
            receiver_login: vec![1.0],
            pairs: vec![pair(0, 0, 0.5, 1.0), pair(1, 0, 0.5, 1.0)],
            capacity: vec![1, 1],
        })
        .unwrap()
    }

    #[test]
    fn discount_factor_grid() {
        assert_eq!(discount_factor(0.0), 1.0);
        let grid: Vec<f64> = (0..400).map(|k| 1e-10 * 1.2f64.powi(k)).collect();
        for w in grid.windows(2) {
            let (a, b) = (discount_factor(w[0]), discount_factor(w[1]));
            assert!(b < a, "not decreasing at {}: {a} {b}", w[1]);
            assert!(w[1] * b <= 1.0);
        }
        // continuity across the Taylor switch
        assert!((discount_factor(1e-8 - 1e-20) - discount_factor(1e-8 + 1e-20)).abs() < 1e-15);
    }

    #[test]
    fn receiver_load_examples() {
        let mk = validate_market(RawMarket {
            proposer_login: vec![1.0, 1.0],
            receiver_login: vec![1.0],
            pairs: vec![pair(0, 0, 0.2, 1.0), pair(1, 0, 0.4, 1.0)],
            capacity: vec![1, 1],
        })
        .unwrap();
        let zero = RecommendationMatrix::zeros(2, 1);
        assert_eq!(receiver_load(&zero, &mk).unwrap().0, vec![0.0]);
        let single = RecommendationMatrix::from_entries(2, 1, vec![entry(0, 0, 1.0)]).unwrap();
        assert!((receiver_load(&single, &mk).unwrap().0[0] - 0.2).abs() < 1e-15);
        let both = RecommendationMatrix::from_entries(2, 1, vec![entry(0, 0, 1.0), entry(1, 0, 0.5)])
            .unwrap();
        assert!((receiver_load(&both, &mk).unwrap().0[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn effective_rate_examples() {
        // μ = 0: no discount
        let mk = two_on_one();
        let zero = RecommendationMatrix::zeros(2, 1);
        assert_eq!(effective_rates(&zero, &mk).unwrap().0, vec![0.5, 0.5]);
        // μ = 1, δ = 0.5: 0.5·(1 − e^{−1}) = 0.31606027941427883
        let both = RecommendationMatrix::from_entries(2, 1, vec![entry(0, 0, 1.0), entry(1, 0, 1.0)])
            .unwrap();
        let rates = effective_rates(&both, &mk).unwrap().0;
        assert!((rates[0] - 0.316_060_279_414_278_83).abs() < 1e-15);
        // μ = 50: δ* ≈ δ/μ
        assert!((0.5 * discount_factor(50.0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_metrics() {
        let mk = two_on_one();
        let r = expected_metrics(&RecommendationMatrix::zeros(2, 1), &mk).unwrap();
        assert_eq!(r.avg_dates_proposer, 0.0);
        assert_eq!(r.avg_effective_dates, 0.0);
        assert_eq!(r.dating_prob_proposer, 0.0);
        assert_eq!(r.dating_prob_receiver, 0.0);
        assert_eq!(r.avg_likes_receiver, 0.0);
    }

    #[test]
    fn one_by_one_metrics() {
        let mk = validate_market(RawMarket {
            proposer_login: vec![1.0],
            receiver_login: vec![1.0],
            pairs: vec![pair(0, 0, 0.5, 0.5)],
            capacity: vec![1],
        })
        .unwrap();
        let m = RecommendationMatrix::from_entries(1, 1, vec![entry(0, 0, 1.0)]).unwrap();
        let r = expected_metrics(&m, &mk).unwrap();
        assert_eq!(r.avg_dates_proposer, 0.25);
        assert_eq!(r.dating_prob_proposer, 0.25);
        assert_eq!(r.dating_prob_receiver, 0.25);
        assert_eq!(r.avg_likes_receiver, 0.5);
    }

    #[test]
    fn two_on_one_metrics() {
        let mk = two_on_one();
        let m = RecommendationMatrix::from_entries(2, 1, vec![entry(0, 0, 1.0), entry(1, 0, 1.0)])
            .unwrap();
        let r = expected_metrics(&m, &mk).unwrap();
        assert_eq!(r.avg_dates_receiver, 1.0);
        assert_eq!(r.receiver_load.0, vec![1.0]);
        assert!((r.avg_effective_dates - 0.316_060_279_414_278_83).abs() < 1e-15);
        assert_eq!(r.avg_dates_proposer * 2.0, r.avg_dates_receiver * 1.0);
    }

    #[test]
    fn expected_inverse_examples() {
        assert_eq!(exact_expected_inverse(&[]).unwrap(), 1.0);
        assert_eq!(exact_expected_inverse(&[1.0]).unwrap(), 0.5);
        let v = exact_expected_inverse(&[0.5, 0.5]).unwrap();
        assert!((v - (0.25 + 0.25 + 0.25 / 3.0)).abs() < 1e-15);
        assert_eq!(
            exact_expected_inverse_bounded(&[0.1; 4], 3).unwrap_err(),
            MetricsError::OracleScale { len: 4, bound: 3 }
        );
        assert!(exact_expected_inverse(&[1.5]).is_err());
    }

    #[test]
    fn exact_effective_examples() {
        let mk = two_on_one();
        let one = RecommendationMatrix::from_entries(2, 1, vec![entry(0, 0, 1.0)]).unwrap();
        let exact = exact_effective_rates(&one, &mk).unwrap();
        assert_eq!(exact[0], 0.5);

        let both = RecommendationMatrix::from_entries(2, 1, vec![entry(0, 0, 1.0), entry(1, 0, 1.0)])
            .unwrap();
        let exact = exact_effective_rates(&both, &mk).unwrap();
        // other proposer dates w.p. 0.5: 0.5·(0.5·1 + 0.5·½)
        assert_eq!(exact, vec![0.375, 0.375]);
    }

    #[test]
    fn small_rates_agree_with_poisson() {
        let mk = validate_market(RawMarket {
            proposer_login: vec![1.0, 1.0],
            receiver_login: vec![1.0],
            pairs: vec![pair(0, 0, 0.005, 1.0), pair(1, 0, 0.005, 1.0)],
            capacity: vec![1, 1],
        })
        .unwrap();
        let m = RecommendationMatrix::from_entries(2, 1, vec![entry(0, 0, 1.0), entry(1, 0, 1.0)])
            .unwrap();
        let exact = exact_effective_rates(&m, &mk).unwrap();
        let approx = effective_rates(&m, &mk).unwrap().0;
        for k in 0..2 {
            // the gap is about δ·μ/2: δ* counts the pair's own date in μ
            assert!((exact[k] - approx[k]).abs() <= 0.005 * 0.01);
        }
    }
}
