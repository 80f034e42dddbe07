//! Command-line runner for the twosided integrators: loads or synthesizes
//! markets, runs single configurations and capacity sweeps, and writes
//! reports as plain CSV.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod sweep;

use thiserror::Error;

use twosided::decompose::DecomposeError;
use twosided::integrators::{IntegratorError, MatrixError};
use twosided::io::IoError;
use twosided::market::ValidationError;
use twosided::metrics::MetricsError;
use twosided::realization::RealizationError;
use twosided::synth::SynthError;

pub use config::{ConfigMap, Integrator, Mechanism, RunConfig};
pub use pipeline::{evaluate, load_market, run, RunSummary};
pub use report::{distribution_report, DistributionReport};
pub use sweep::{sweep, sweep_market, FrontierRow, SweepIntegrator, SweepSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Realization(#[from] RealizationError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("oracle: {0}")]
    OracleScale(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// 1 for bad input, 3 for oracle requests beyond its bound, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) | HarnessError::Validation(_) | HarnessError::Input(_) => 1,
            HarnessError::Integrator(IntegratorError::NonIntegerCapacity { .. })
            | HarnessError::Integrator(IntegratorError::InvalidCapacity { .. })
            | HarnessError::Integrator(IntegratorError::LengthMismatch { .. })
            | HarnessError::Matrix(_)
            | HarnessError::Synth(_)
            | HarnessError::Decompose(DecomposeError::Infeasible(_)) => 1,
            HarnessError::OracleScale(_) => 3,
            _ => 2,
        }
    }
}

impl From<IoError> for HarnessError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Validation(v) => HarnessError::Validation(v),
            IoError::Matrix(m) => HarnessError::Matrix(m),
            IoError::Synth(s) => HarnessError::Synth(s),
            IoError::Io(io) => HarnessError::Io(io),
            other => HarnessError::Input(other.to_string()),
        }
    }
}

impl From<MetricsError> for HarnessError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Matrix(m) => HarnessError::Matrix(m),
            MetricsError::OracleScale { .. } => HarnessError::OracleScale(e.to_string()),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}
