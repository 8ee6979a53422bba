//! Conditional variational autoencoder for single-scene gap filling.
//!
//! Three fully connected stacks:
//!
//! - the attribute network reads the cloudy image (missing pixels set to 0,
//!   the normalized mean) and produces the conditioning vector;
//! - the encoder reads the complete image and produces `mu` and `logvar`;
//! - the decoder reads `[z ‖ attr]` and outputs the image. Each decoder layer
//!   gets the attribute-network activation of the same width added to its
//!   pre-activation, the last one the cloudy input itself.
//!
//! Everything is written against [`Real`] so the same code runs in `f32`
//! (training and inference) and `f64` (gradient checks).

mod adam;
mod arch;
mod infer;
mod io;
mod layer;
mod loss;
mod net;
mod train;

use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use thiserror::Error;

use crate::grid::GridError;

pub use adam::{Adam, AdamConfig};
pub use arch::ArchConfig;
pub use infer::{
    fit_latent_prior, rank_by_field_truth, reconstruct, reconstruct_normalized, sample_ensemble,
    LatentPrior, RankedMember,
};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layer::{Activation, DenseLayer};
pub use loss::{kl_term, loss, recon_term, LossParts};
pub use net::{
    AttrOutput, Batch, BatchTrace, Gradients, LatentDistribution, VConstructModel, LOGVAR_CLAMP,
};
pub use train::{train, EpochStats, TrainConfig, TrainingLog};

#[derive(Debug, Error)]
pub enum VConstructError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("no eligible training days")]
    NoTrainingDays,
    #[error("scene is normalized with different statistics than the model")]
    NormMismatch,
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("truth point ({row}, {col}) is on land")]
    TruthOnLand { row: usize, col: usize },
    #[error("truth point ({row}, {col}) is outside the grid")]
    TruthOutOfBounds { row: usize, col: usize },
    #[error("no truth point falls in the missing region")]
    NoTruthInMissing,
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("truncated model file")]
    Truncated,
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T, E = VConstructError> = std::result::Result<T, E>;

/// Floating-point element type of a network.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
{
}

impl<T> Real for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + LinalgScalar
        + ScalarOperand
        + Debug
        + Default
        + Send
        + Sync
{
}

#[inline]
pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("f64 converts to any float type")
}

#[inline]
pub(crate) fn f64_of<F: Real>(x: F) -> f64 {
    x.to_f64().expect("float converts to f64")
}
