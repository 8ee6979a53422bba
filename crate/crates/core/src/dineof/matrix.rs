use ndarray::Array2;

use super::{DineofError, Result};
use crate::grid::{GridError, PixelStatus, Scene, SceneSeries};

/// Space×time layout of a series: one row per water pixel (row-major grid
/// order), one column per day. Missing entries hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    pub matrix: Array2<f64>,
    /// Row index → (grid row, grid col).
    pub pixel_map: Vec<(usize, usize)>,
    pub missing: Array2<bool>,
}

impl DataMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Wraps a plain matrix; NaN entries become missing. Rows map to a single
    /// grid column, which is enough for matrix-only use.
    pub fn from_matrix(matrix: Array2<f64>) -> Self {
        let missing = matrix.mapv(|v| !v.is_finite());
        let pixel_map = (0..matrix.nrows()).map(|r| (r, 0)).collect();
        Self {
            matrix,
            pixel_map,
            missing,
        }
    }
}

pub fn to_data_matrix(series: &SceneSeries) -> Result<DataMatrix> {
    let pixel_map: Vec<(usize, usize)> = series
        .land()
        .indexed_iter()
        .filter(|(_, &l)| !l)
        .map(|(idx, _)| idx)
        .collect();
    if pixel_map.is_empty() {
        return Err(DineofError::AllLand);
    }
    let t = series.len();
    let mut matrix = Array2::from_elem((pixel_map.len(), t), f64::NAN);
    let mut missing = Array2::from_elem((pixel_map.len(), t), true);
    for (j, scene) in series.scenes().iter().enumerate() {
        for (i, &(r, c)) in pixel_map.iter().enumerate() {
            if scene.status()[[r, c]].is_observed() {
                matrix[[i, j]] = scene.values()[[r, c]];
                missing[[i, j]] = false;
            }
        }
    }
    Ok(DataMatrix {
        matrix,
        pixel_map,
        missing,
    })
}

/// Inverse of [`to_data_matrix`]: entries flagged missing become cloud pixels,
/// all others observed. Grid, land, days and value space come from `template`.
pub fn from_data_matrix(dm: &DataMatrix, template: &SceneSeries) -> Result<SceneSeries> {
    let (h, w) = template.dim();
    if dm.cols() != template.len() || dm.pixel_map.len() != dm.rows() {
        return Err(GridError::InvalidDimensions(format!(
            "{}x{} matrix for a {}-day series",
            dm.rows(),
            dm.cols(),
            template.len()
        ))
        .into());
    }
    if dm.rows() != template.water_count()
        || dm
            .pixel_map
            .iter()
            .any(|&(r, c)| r >= h || c >= w || template.land()[[r, c]])
    {
        return Err(GridError::InvalidDimensions(
            "pixel map does not match the template's water pixels".into(),
        )
        .into());
    }
    let mut scenes = Vec::with_capacity(dm.cols());
    for j in 0..dm.cols() {
        let mut values = Array2::from_elem((h, w), f64::NAN);
        let mut status = template.land().mapv(|l| {
            if l {
                PixelStatus::Land
            } else {
                PixelStatus::Cloud
            }
        });
        for (i, &(r, c)) in dm.pixel_map.iter().enumerate() {
            if !dm.missing[[i, j]] {
                values[[r, c]] = dm.matrix[[i, j]];
                status[[r, c]] = PixelStatus::Observed;
            }
        }
        scenes.push(Scene::new(values, status)?);
    }
    Ok(SceneSeries::new(
        scenes,
        template.day_index().to_vec(),
        template.land().clone(),
        template.space(),
    )?)
}
