//! Per-receiver load distributions and their histograms.

use twosided::integrators::RecommendationMatrix;
use twosided::io;
use twosided::market::MarketInstance;
use twosided::metrics::expected_metrics;

use crate::artifacts::ArtifactDir;
use crate::HarnessError;

/// Receivers whose load is within this distance of their cap count as
/// sitting on it.
pub const SPIKE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionReport {
    /// Expected dates per receiver.
    pub mu: Vec<f64>,
    /// Expected likes per receiver.
    pub like_load: Vec<f64>,
}

pub fn distribution_report(
    m: &RecommendationMatrix,
    market: &MarketInstance,
) -> Result<DistributionReport, HarnessError> {
    let r = expected_metrics(m, market)?;
    Ok(DistributionReport { mu: r.receiver_load.0, like_load: r.receiver_like_load })
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Number of receivers with `|μ_j − q_j| ≤ SPIKE_TOL`.
pub fn spike_count(mu: &[f64], q: &[f64]) -> usize {
    mu.iter().zip(q).filter(|(m, q)| (*m - *q).abs() <= SPIKE_TOL).count()
}

impl DistributionReport {
    pub fn mu_variance(&self) -> f64 {
        variance(&self.mu)
    }

    pub fn like_variance(&self) -> f64 {
        variance(&self.like_load)
    }

    /// Writes `load.csv`, `hist_dates.csv` and `hist_likes.csv`.
    pub fn write(&self, dir: &mut ArtifactDir, bins: usize) -> Result<(), HarnessError> {
        dir.write("load.csv", |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["receiver_id", "mu", "like_load"]).map_err(crate::pipeline::csv_err)?;
            for (j, (mu, like)) in self.mu.iter().zip(&self.like_load).enumerate() {
                out.write_record([j.to_string(), mu.to_string(), like.to_string()])
                    .map_err(crate::pipeline::csv_err)?;
            }
            out.flush()?;
            Ok(())
        })?;
        dir.write("hist_dates.csv", |w| Ok(io::write_histogram_csv(w, &self.mu, bins)?))?;
        dir.write("hist_likes.csv", |w| Ok(io::write_histogram_csv(w, &self.like_load, bins)?))?;
        Ok(())
    }
}
