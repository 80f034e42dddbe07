//! Capacity sweeps: every (integrator, q) point on a shared market, one
//! frontier row each, in grid order.

use std::fmt;
use std::io::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

use twosided::integrators::{ExposureKind, ReceiverCapacity};
use twosided::io::{self, metric_values, METRIC_COLUMNS};
use twosided::market::{MarketInstance, SortKind};
use twosided::metrics::expected_metrics;

use crate::artifacts::{short_id, ArtifactDir};
use crate::config::{CapacitySpec, ConfigMap, Integrator, Mechanism, RunConfig};
use crate::pipeline::{csv_err, evaluate, load_market};
use crate::report::{spike_count, variance};
use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepIntegrator {
    OneSided(SortKind),
    Da,
    Ecda(ExposureKind),
}

impl FromStr for SweepIntegrator {
    type Err = HarnessError;

    /// `one_sided[:like|:date]`, `da`, `ecda:<headcount|like|date>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: String| HarnessError::Config(format!("integrator {s:?}: {m}"));
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        match (name, arg) {
            ("one_sided", None) => Ok(Self::OneSided(SortKind::DateSort)),
            ("one_sided", Some(k)) => Ok(Self::OneSided(k.parse().map_err(bad)?)),
            ("da", None) => Ok(Self::Da),
            ("ecda", Some(k)) => Ok(Self::Ecda(k.parse().map_err(bad)?)),
            ("ecda", None) => Err(bad("ecda needs an exposure, e.g. ecda:date".into())),
            _ => Err(bad("expected one_sided, da or ecda:<exposure>".into())),
        }
    }
}

impl fmt::Display for SweepIntegrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OneSided(k) => write!(f, "one_sided:{k}"),
            Self::Da => f.write_str("da"),
            Self::Ecda(e) => write!(f, "ecda:{e}"),
        }
    }
}

impl SweepIntegrator {
    fn mechanism(self, sort: SortKind, q: Option<f64>) -> Mechanism {
        match self {
            Self::OneSided(k) => Mechanism { integrator: Integrator::OneSided, sort: k, exposure: None, q: None },
            Self::Da => Mechanism { integrator: Integrator::Da, sort, exposure: None, q: q.map(CapacitySpec::Scalar) },
            Self::Ecda(e) => {
                Mechanism { integrator: Integrator::Ecda, sort, exposure: Some(e), q: q.map(CapacitySpec::Scalar) }
            }
        }
    }

    fn uses_grid(self) -> bool {
        !matches!(self, Self::OneSided(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub metrics: [f64; 7],
    pub mu: Vec<f64>,
    pub mu_variance: f64,
    pub like_variance: f64,
    /// Receivers sitting on the cap; only meaningful for date exposure.
    pub spikes: usize,
}

impl PointResult {
    pub fn avg_effective_dates(&self) -> f64 {
        self.metrics[2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontierRow {
    pub integrator: SweepIntegrator,
    /// `None` for one-sided rows.
    pub q: Option<f64>,
    pub outcome: Result<PointResult, String>,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: ConfigMap,
    pub grid: Vec<f64>,
    pub integrators: Vec<SweepIntegrator>,
    pub jobs: usize,
}

impl SweepSpec {
    pub fn check(&self) -> Result<(), HarnessError> {
        if self.grid.is_empty() {
            return Err(HarnessError::Config("capacity grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(HarnessError::Config("capacity grid must be strictly increasing".into()));
        }
        if self.integrators.is_empty() {
            return Err(HarnessError::Config("no integrators to sweep".into()));
        }
        Ok(())
    }
}

fn points(integrators: &[SweepIntegrator], grid: &[f64]) -> Vec<(SweepIntegrator, Option<f64>)> {
    integrators
        .iter()
        .flat_map(|&ig| {
            if ig.uses_grid() {
                grid.iter().map(|&q| (ig, Some(q))).collect::<Vec<_>>()
            } else {
                vec![(ig, None)]
            }
        })
        .collect()
}

fn run_point(
    market: &MarketInstance,
    ig: SweepIntegrator,
    sort: SortKind,
    q: Option<f64>,
    dir: Option<&PathBuf>,
) -> Result<PointResult, HarnessError> {
    let mech = ig.mechanism(sort, q);
    let cap = q.map(|q| ReceiverCapacity::uniform(market.n_receivers(), q));
    let m = evaluate(market, &mech, cap.as_ref())?;
    let r = expected_metrics(&m, market)?;
    if let Some(root) = dir {
        let mut out = ArtifactDir::create(root.join(point_name(ig, q)))?;
        out.write("matrix.csv", |w| Ok(io::write_matrix_csv(w, &m)?))?;
        out.write("metrics.csv", |w| Ok(io::write_metrics_csv(w, &point_name(ig, q), &r)?))?;
        out.write("load.csv", |w| Ok(io::write_load_csv(w, &r)?))?;
        out.finish()?;
    }
    let spikes = match (ig, &cap) {
        (SweepIntegrator::Ecda(ExposureKind::DateExposure), Some(c)) => spike_count(&r.receiver_load.0, c.values()),
        _ => 0,
    };
    Ok(PointResult {
        metrics: metric_values(&r),
        mu_variance: variance(&r.receiver_load.0),
        like_variance: variance(&r.receiver_like_load),
        spikes,
        mu: r.receiver_load.0,
    })
}

fn point_name(ig: SweepIntegrator, q: Option<f64>) -> String {
    let label = ig.to_string().replace(':', "_");
    match q {
        Some(q) => format!("{label}_q{q}"),
        None => label,
    }
}

/// Evaluates every point on `market`, at most `jobs` at a time. Point
/// directories are written under `dir` when given. Rows come back in
/// integrator then grid order; a failing point keeps its error message.
pub fn sweep_market(
    market: &MarketInstance,
    integrators: &[SweepIntegrator],
    grid: &[f64],
    sort: SortKind,
    jobs: usize,
    dir: Option<&PathBuf>,
) -> Result<Vec<FrontierRow>, HarnessError> {
    let pts = points(integrators, grid);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok(pool.install(|| {
        pts.par_iter()
            .map(|&(ig, q)| FrontierRow {
                integrator: ig,
                q,
                outcome: run_point(market, ig, sort, q, dir).map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

pub fn write_frontier<W: std::io::Write>(w: W, rows: &[FrontierRow]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["integrator", "q", "status"];
    header.extend(METRIC_COLUMNS);
    header.extend(["mu_variance", "like_variance", "spike_count"]);
    out.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let mut rec = vec![row.integrator.to_string(), row.q.map(|q| q.to_string()).unwrap_or_default()];
        match &row.outcome {
            Ok(p) => {
                rec.push("ok".into());
                rec.extend(p.metrics.iter().map(f64::to_string));
                rec.extend([p.mu_variance.to_string(), p.like_variance.to_string(), p.spikes.to_string()]);
            }
            Err(e) => {
                rec.push(format!("error: {e}"));
                rec.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len() + 3));
            }
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Loads the base market once, runs all points, and writes
/// `<out>/sweep-<id>/` with one subdirectory per point and `frontier.csv`.
pub fn sweep(spec: &SweepSpec) -> Result<(PathBuf, Vec<FrontierRow>), HarnessError> {
    spec.check()?;
    let mut base = spec.base.clone();
    if base.get("integrator").is_none() {
        base.set("integrator", "one_sided");
    }
    base.remove("q");
    let cfg = RunConfig::from_map(&base)?;
    let market = load_market(&cfg.market)?;

    let mut key = base.clone();
    key.remove("out");
    key.set("seed", cfg.seed.to_string());
    let grid: Vec<String> = spec.grid.iter().map(f64::to_string).collect();
    let igs: Vec<String> = spec.integrators.iter().map(ToString::to_string).collect();
    let id = short_id(&format!("{key}grid = {}\nintegrators = {}\n", grid.join(","), igs.join(",")));

    let mut dir = ArtifactDir::create(cfg.out.join(format!("sweep-{id}")))?;
    let points_root = dir.path().join("points");
    let rows = sweep_market(&market, &spec.integrators, &spec.grid, cfg.mechanism.sort, spec.jobs, Some(&points_root))?;
    dir.write("config.txt", |w| {
        write!(w, "{key}grid = {}\nintegrators = {}\n", grid.join(","), igs.join(","))?;
        Ok(())
    })?;
    dir.write("frontier.csv", |w| write_frontier(w, &rows))?;
    Ok((dir.finish()?, rows))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_names() {
        assert_eq!("da".parse::<SweepIntegrator>().unwrap(), SweepIntegrator::Da);
        assert_eq!(
            "ecda:like".parse::<SweepIntegrator>().unwrap(),
            SweepIntegrator::Ecda(ExposureKind::LikeExposure)
        );
        assert_eq!("one_sided".parse::<SweepIntegrator>().unwrap(), SweepIntegrator::OneSided(SortKind::DateSort));
        assert!("ecda".parse::<SweepIntegrator>().is_err());
        for s in ["one_sided:like", "da", "ecda:date", "ecda:headcount"] {
            assert_eq!(s.parse::<SweepIntegrator>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn grid_must_increase() {
        let spec = |grid: Vec<f64>| SweepSpec {
            base: ConfigMap::default(),
            grid,
            integrators: vec![SweepIntegrator::Da],
            jobs: 1,
        };
        assert!(spec(vec![]).check().is_err());
        assert!(spec(vec![1.0, 1.0]).check().is_err());
        assert!(spec(vec![2.0, 1.0]).check().is_err());
        assert!(spec(vec![1.0, 2.0]).check().is_ok());
    }
}
