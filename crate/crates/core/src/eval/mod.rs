//! Metrics, the masked-test-day experiment and timing benchmarks.

mod bench;
mod experiment;
mod metrics;

use thiserror::Error;

use crate::dineof::DineofError;
use crate::grid::GridError;
use crate::vconstruct::VConstructError;

pub use bench::{bench_speed, median, BenchConfig, SpeedReport};
pub use experiment::{
    run_experiment, Method, MetricRow, MetricsReport, MetricsSpace, Protocol, RegionSpec,
};
pub use metrics::{r2, rmse};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation mask selects no pixel")]
    EmptyMask,
    #[error("r2 needs at least 2 pixels, mask selects {0}")]
    TooFewPixels(usize),
    #[error("truth has zero variance over the mask")]
    ZeroVariance,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad region: {0}")]
    BadRegion(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("test day {0} was used for training")]
    Leak(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dineof(#[from] DineofError),
    #[error(transparent)]
    VConstruct(#[from] VConstructError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
