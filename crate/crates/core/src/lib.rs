//! Gap filling for gridded ocean-colour time series.
//!
//! Two reconstruction methods share one data model:
//!
//! - [`dineof`]: iterative truncated-SVD gap filling with cross-validated mode
//!   selection (the EOF baseline).
//! - [`vconstruct`]: a variational autoencoder whose decoder is conditioned on an
//!   attribute vector extracted from the cloudy image, with additive skip
//!   connections from the attribute network into the decoder.
//!
//! [`grid`] holds scenes, preprocessing, synthetic data and cloud masks, and
//! [`eval`] runs the masked-test-day protocol and timing benchmarks.

pub mod dineof;
pub mod eval;
pub mod grid;
pub mod vconstruct;

pub use grid::{CloudMask, GridRect, NormStats, PixelStatus, Scene, SceneSeries, ValueSpace};
