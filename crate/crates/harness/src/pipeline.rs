use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use twosided::integrators::{
    da_iterative, ecda_iterative, exposure_weights, greedy_da, greedy_ecda, one_sided, ExposureKind,
    ReceiverCapacity, RecommendationMatrix,
};
use twosided::io;
use twosided::market::{build_rols, validate_market, MarketInstance, SortKind};
use twosided::metrics::{effective_rates, exact_effective_rates_bounded, expected_metrics, MetricsReport};
use twosided::realization::{monte_carlo, realized_metrics, simulate_day};
use twosided::synth::{dataset_config, sample_market, RateDistribution, SynthConfig};
use twosided::decompose::birkhoff_decompose;

use crate::artifacts::{short_id, ArtifactDir};
use crate::config::{CapacitySpec, Integrator, MarketSource, Mechanism, RunConfig};
use crate::HarnessError;

/// Largest number of recommended proposers per receiver the exact oracle is
/// run on; its cost grows with the cube of that count.
pub const ORACLE_COLUMN_BOUND: usize = 500;

fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DistributionSource {
    Path(PathBuf),
    Inline(RateDistribution),
}

/// Synthetic-market spec: a distribution (file path relative to the spec,
/// or inline) plus the sampling config.
#[derive(Deserialize)]
struct SynthSpecFile {
    distribution: DistributionSource,
    #[serde(flatten)]
    config: SynthConfig,
}

pub struct SynthSpec {
    pub distribution: RateDistribution,
    pub config: SynthConfig,
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec, HarnessError> {
    let spec: SynthSpecFile = serde_json::from_reader(open(path)?)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    let distribution = match spec.distribution {
        DistributionSource::Inline(d) => {
            d.validate()?;
            d
        }
        DistributionSource::Path(p) => {
            let p = path.parent().map(|dir| dir.join(&p)).unwrap_or(p);
            io::read_distribution(open(&p)?)?
        }
    };
    spec.config.validate()?;
    Ok(SynthSpec { distribution, config: spec.config })
}

pub fn load_market(source: &MarketSource) -> Result<MarketInstance, HarnessError> {
    match source {
        MarketSource::Pairs { path, capacities, default_capacity } => {
            let mut raw = io::read_pair_csv(open(path)?, *default_capacity)?;
            if let Some(c) = capacities {
                io::read_capacity_csv(open(c)?, &mut raw)?;
            }
            Ok(validate_market(raw)?)
        }
        MarketSource::Synth { spec, dataset } => {
            let spec = load_synth_spec(spec)?;
            if *dataset == 0 || *dataset > spec.config.n_datasets {
                return Err(HarnessError::Config(format!(
                    "dataset {dataset} outside 1..={}",
                    spec.config.n_datasets
                )));
            }
            Ok(sample_market(&spec.distribution, &dataset_config(&spec.config, *dataset))?)
        }
    }
}

pub fn receiver_capacity(spec: &CapacitySpec, market: &MarketInstance) -> Result<ReceiverCapacity, HarnessError> {
    match spec {
        CapacitySpec::Scalar(q) => Ok(ReceiverCapacity::uniform(market.n_receivers(), *q)),
        CapacitySpec::File(path) => {
            Ok(ReceiverCapacity::new(io::read_receiver_capacity_csv(open(path)?, market.n_receivers())?)?)
        }
    }
}

/// Runs one integrator. Date-sorted DA and ECDA use the greedy pass; other
/// list orders run the proposal protocol.
pub fn evaluate(
    market: &MarketInstance,
    mechanism: &Mechanism,
    q: Option<&ReceiverCapacity>,
) -> Result<RecommendationMatrix, HarnessError> {
    mechanism.check()?;
    let need_q = || q.ok_or_else(|| HarnessError::Config(format!("{} needs a receiver capacity", mechanism.integrator)));
    match mechanism.integrator {
        Integrator::OneSided => Ok(one_sided(market, &build_rols(market, mechanism.sort))),
        Integrator::Da => {
            let q = need_q()?;
            Ok(match mechanism.sort {
                SortKind::DateSort => greedy_da(market, q)?,
                SortKind::LikeSort => da_iterative(market, &build_rols(market, SortKind::LikeSort), q)?,
            })
        }
        Integrator::Ecda => {
            let q = need_q()?;
            let w = exposure_weights(mechanism.exposure.unwrap_or(ExposureKind::DateExposure), market);
            Ok(match mechanism.sort {
                SortKind::DateSort => greedy_ecda(market, q, &w)?,
                SortKind::LikeSort => ecda_iterative(market, &build_rols(market, SortKind::LikeSort), q, &w)?,
            })
        }
    }
}

pub struct RunSummary {
    pub run_id: String,
    pub dir: PathBuf,
    pub matrix: RecommendationMatrix,
    pub metrics: MetricsReport,
}

/// Identifier of a run: hash of the settings (output location excluded)
/// and the seed.
pub fn run_id(cfg: &RunConfig) -> String {
    let mut source = cfg.source.clone();
    source.remove("out");
    source.set("seed", cfg.seed.to_string());
    short_id(&source.to_string())
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary, HarnessError> {
    let market = load_market(&cfg.market)?;
    let q = cfg.mechanism.q.as_ref().map(|s| receiver_capacity(s, &market)).transpose()?;
    let m = evaluate(&market, &cfg.mechanism, q.as_ref())?;
    let metrics = expected_metrics(&m, &market)?;
    let id = run_id(cfg);

    let mut dir = ArtifactDir::create(cfg.out.join(&id))?;
    let mut settings = cfg.source.clone();
    settings.remove("out");
    settings.set("seed", cfg.seed.to_string());
    dir.write("config.txt", |w| Ok(write!(w, "{settings}")?))?;
    dir.write("matrix.csv", |w| Ok(io::write_matrix_csv(w, &m)?))?;
    if cfg.expected {
        dir.write("metrics.csv", |w| Ok(io::write_metrics_csv(w, &id, &metrics)?))?;
    }
    dir.write("load.csv", |w| Ok(io::write_load_csv(w, &metrics)?))?;

    if cfg.oracle {
        let exact = exact_effective_rates_bounded(&m, &market, ORACLE_COLUMN_BOUND)?;
        let approx = effective_rates(&m, &market)?.0;
        dir.write("oracle.csv", |w| {
            let mut out = csv_writer(w);
            out.write_record(["proposer_id", "receiver_id", "delta", "delta_star", "delta_dagger"])
                .map_err(csv_err)?;
            for (idx, _) in m.pair_entries(&market)? {
                let p = market.pair(idx);
                out.write_record([
                    p.proposer.to_string(),
                    p.receiver.to_string(),
                    market.delta(idx).to_string(),
                    approx[idx].to_string(),
                    exact[idx].to_string(),
                ])
                .map_err(csv_err)?;
            }
            out.flush()?;
            Ok(())
        })?;
    }

    if let Some(days) = cfg.monte_carlo_days {
        let mc = monte_carlo(&m, &market, days, cfg.seed, cfg.login)?;
        dir.write("realized.csv", |w| Ok(io::write_realized_csv(w, &id, &mc)?))?;
        if cfg.events {
            write_events(&mut dir, &m, &market, days, cfg)?;
        }
    }

    if cfg.decompose {
        let d = birkhoff_decompose(&m, &market)?;
        dir.write("decomposition/components.csv", |w| Ok(io::write_components_csv(w, &d)?))?;
        for (k, c) in d.components.iter().enumerate() {
            dir.write(&format!("decomposition/component_{k}.csv"), |w| Ok(io::write_menu_csv(w, c)?))?;
        }
    }

    let dir = dir.finish()?;
    Ok(RunSummary { run_id: id, dir, matrix: m, metrics })
}

fn write_events(
    dir: &mut ArtifactDir,
    m: &RecommendationMatrix,
    market: &MarketInstance,
    days: u64,
    cfg: &RunConfig,
) -> Result<(), HarnessError> {
    let mut logs = Vec::new();
    let mut identity_ok = true;
    for day in 0..days {
        let log = simulate_day(m, market, cfg.seed, day, cfg.login)?;
        let r = realized_metrics(&log);
        identity_ok &= r.effective_total() == r.receivers_with_date as f64;
        logs.push(log);
    }
    if !identity_ok {
        return Err(HarnessError::Runtime("effective-date accounting identity violated".into()));
    }
    dir.write("events.csv", |w| Ok(io::write_event_log_csv(w, &logs)?))
}

pub(crate) fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

pub(crate) fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}
