//! EOF gap filling: iterative truncated-SVD reconstruction with the number of
//! modes chosen by cross-validation on held-out observed entries.

mod fill;
mod matrix;
mod svd;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::grid::GridError;

pub use fill::{dineof_fill, dineof_reconstruct, DineofConfig, FillReport, ModeTrial};
pub use matrix::{from_data_matrix, to_data_matrix, DataMatrix};
pub use svd::{truncated_svd, truncated_svd_with, SvdOptions};

#[derive(Debug, Error)]
pub enum DineofError {
    #[error("empty matrix")]
    Empty,
    #[error("grid has no water pixels")]
    AllLand,
    #[error("matrix has no observed entries")]
    NoObserved,
    #[error("matrix contains missing entries; truncated_svd needs a filled matrix")]
    NotFilled,
    #[error("rank {k} outside 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("subspace iteration did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T, E = DineofError> = std::result::Result<T, E>;

/// Truncated SVD factors of a space×time matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EofModel {
    /// S×k, orthonormal columns.
    pub spatial_modes: Array2<f64>,
    /// Non-increasing, non-negative.
    pub singular_values: Array1<f64>,
    /// T×k, orthonormal columns.
    pub temporal_modes: Array2<f64>,
}

impl EofModel {
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(σ) Vᵀ`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.spatial_modes * &self.singular_values;
        scaled.dot(&self.temporal_modes.t())
    }

    /// Single entry of the reconstruction.
    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        (0..self.k())
            .map(|l| {
                self.spatial_modes[[row, l]]
                    * self.singular_values[l]
                    * self.temporal_modes[[col, l]]
            })
            .sum()
    }
}
