//! Two-sided recommendation integrators.
//!
//! A [`MarketInstance`] holds predicted login, like and relike rates for
//! proposers and receivers. Integrators turn it into a
//! [`RecommendationMatrix`] that respects each proposer's cognitive capacity
//! and, for deferred acceptance variants, a per-receiver capacity measured in
//! headcount, expected likes or expected dates. The [`metrics`] module scores
//! a matrix with congestion-adjusted indicators and [`realization`] samples
//! daily outcomes to check them.

pub mod decompose;
pub mod integrators;
pub mod io;
pub mod market;
pub mod metrics;
pub mod realization;
pub mod synth;

pub use decompose::{birkhoff_decompose, MenuComponent, MenuDecomposition};
pub use integrators::{
    da_iterative, ecda_iterative, exposure_weights, greedy_da, greedy_ecda, one_sided,
    ExposureKind, ExposureWeights, ReceiverCapacity, RecommendationMatrix,
};
pub use market::{
    build_rols, dating_rate, validate_market, MarketInstance, Pair, RankOrderLists, RawMarket,
    Side, SortKind, UserId,
};
pub use metrics::{expected_metrics, MetricsReport};
