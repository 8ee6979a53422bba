//! Gridded scenes, preprocessing, synthetic series and cloud masks.
//!
//! A [`Scene`] is one day on an H×W grid. Every pixel carries a [`PixelStatus`];
//! the status array is authoritative and non-observed pixels always hold the
//! canonical quiet NaN sentinel ([`MISSING`]).

mod io;
mod mask;
mod select;
mod synth;
mod transform;

use ndarray::Array2;
use thiserror::Error;

pub use io::{load_mask, load_series, save_mask, save_series, MAGIC as SERIES_MAGIC};
pub use mask::{apply_mask, gen_cloud_mask};
pub use select::{select_test_days, DEFAULT_MAX_MISSING_FRAC};
pub use synth::{synth_log_field, synth_series, temporal_variance, SynthConfig};
pub use transform::{denormalize, inverse_log_transform, log_transform, normalize};

/// Storage sentinel for cloud and land pixels.
pub const MISSING: f64 = f64::NAN;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("observed pixel ({row}, {col}) has non-finite value")]
    NonFiniteObserved { row: usize, col: usize },
    #[error("observed value {value} at day {day} ({row}, {col}) is not strictly positive")]
    NonPositive {
        day: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("land mask disagrees with pixel status at day {day} ({row}, {col})")]
    LandMismatch { day: usize, row: usize, col: usize },
    #[error("day_index must be strictly increasing")]
    DayIndexOrder,
    #[error("series is in {found} space, operation requires {expected}")]
    WrongSpace {
        expected: &'static str,
        found: &'static str,
    },
    #[error("need at least 2 observed pixels to normalize, found {0}")]
    TooFewObserved(usize),
    #[error("observed values have zero variance")]
    ZeroVariance,
    #[error("coverage target {0} outside [0, 0.95]")]
    CoverageOutOfRange(f64),
    #[error("only {available} days have missing fraction <= {max_missing_frac}, need {needed}")]
    NotEnoughDays {
        needed: usize,
        available: usize,
        max_missing_frac: f64,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported flags 0x{0:02x}")]
    BadFlags(u8),
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;

/// Per-pixel status. Discriminants are the on-disk status bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum PixelStatus {
    #[default]
    Observed = 0,
    Cloud = 1,
    Land = 2,
}

impl PixelStatus {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Observed),
            1 => Some(Self::Cloud),
            2 => Some(Self::Land),
            _ => None,
        }
    }

    pub fn is_observed(self) -> bool {
        self == Self::Observed
    }
}

/// Log-space statistics of a log10-then-zscore transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
            return Err(GridError::ZeroVariance);
        }
        Ok(Self { mean, std })
    }

    #[inline]
    pub fn forward(&self, log_value: f64) -> f64 {
        (log_value - self.mean) / self.std
    }

    #[inline]
    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    /// Normalized value back to concentration.
    #[inline]
    pub fn to_concentration(&self, z: f64) -> f64 {
        10f64.powf(self.inverse(z))
    }

    /// Concentration to normalized value.
    #[inline]
    pub fn from_concentration(&self, c: f64) -> f64 {
        self.forward(c.log10())
    }
}

/// The space the values of a series live in.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum ValueSpace {
    /// Chl-a concentration, mg/m³.
    #[default]
    Concentration,
    /// log10 of concentration.
    Log10,
    /// log10 then z-scored with the given statistics.
    Normalized(NormStats),
}

impl ValueSpace {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Concentration => "concentration",
            Self::Log10 => "log10",
            Self::Normalized(_) => "normalized",
        }
    }

    /// Maps a value in this space to concentration.
    pub fn to_concentration(&self, v: f64) -> f64 {
        match self {
            Self::Concentration => v,
            Self::Log10 => 10f64.powf(v),
            Self::Normalized(s) => s.to_concentration(v),
        }
    }

    /// Maps a value in this space to log10 concentration.
    pub fn to_log10(&self, v: f64) -> f64 {
        match self {
            Self::Concentration => v.log10(),
            Self::Log10 => v,
            Self::Normalized(s) => s.inverse(v),
        }
    }
}

/// Half-open rectangle `[row0, row1) × [col0, col1)` on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl GridRect {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Self {
        Self {
            row0,
            col0,
            row1,
            col1,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, height, width)
    }

    pub fn is_empty(&self) -> bool {
        self.row1 <= self.row0 || self.col1 <= self.col0
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row1 <= height && self.col1 <= width
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.row1 - self.row0) * (self.col1 - self.col0)
        }
    }
}

/// One day on the grid.
///
/// Equality is bitwise on values (NaN sentinels compare equal) and exact on status.
#[derive(Clone, Debug)]
pub struct Scene {
    values: Array2<f64>,
    status: Array2<PixelStatus>,
}

impl PartialEq for Scene {
    fn eq(&self, other: &Self) -> bool {
        self.status == other.status
            && self.values.shape() == other.values.shape()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Scene {
    /// Builds a scene; non-observed pixels are overwritten with the sentinel.
    pub fn new(mut values: Array2<f64>, status: Array2<PixelStatus>) -> Result<Self> {
        if values.dim() != status.dim() {
            return Err(GridError::ShapeMismatch {
                expected: status.dim(),
                got: values.dim(),
            });
        }
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(GridError::InvalidDimensions(format!("{h}x{w} scene")));
        }
        for ((r, c), v) in values.indexed_iter_mut() {
            if status[[r, c]].is_observed() {
                if !v.is_finite() {
                    return Err(GridError::NonFiniteObserved { row: r, col: c });
                }
            } else {
                *v = MISSING;
            }
        }
        Ok(Self { values, status })
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn status(&self) -> &Array2<PixelStatus> {
        &self.status
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.status[[row, col]]
            .is_observed()
            .then(|| self.values[[row, col]])
    }

    pub fn observed_count(&self) -> usize {
        self.status.iter().filter(|s| s.is_observed()).count()
    }

    pub fn cloud_count(&self) -> usize {
        self.status
            .iter()
            .filter(|&&s| s == PixelStatus::Cloud)
            .count()
    }

    pub fn water_count(&self) -> usize {
        self.status
            .iter()
            .filter(|&&s| s != PixelStatus::Land)
            .count()
    }

    /// Cloud pixels over non-land pixels; 0 for an all-land scene.
    pub fn missing_fraction(&self) -> f64 {
        let water = self.water_count();
        if water == 0 {
            0.0
        } else {
            self.cloud_count() as f64 / water as f64
        }
    }

    /// Applies `f` to every observed value.
    pub fn map_observed(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mut values = self.values.clone();
        for (v, s) in values.iter_mut().zip(self.status.iter()) {
            if s.is_observed() {
                *v = f(*v);
            }
        }
        Self {
            values,
            status: self.status.clone(),
        }
    }

    pub(crate) fn from_parts_unchecked(values: Array2<f64>, status: Array2<PixelStatus>) -> Self {
        Self { values, status }
    }
}

/// An ordered daily series on a shared grid and land mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSeries {
    scenes: Vec<Scene>,
    day_index: Vec<u32>,
    land: Array2<bool>,
    space: ValueSpace,
}

impl SceneSeries {
    pub fn new(
        scenes: Vec<Scene>,
        day_index: Vec<u32>,
        land: Array2<bool>,
        space: ValueSpace,
    ) -> Result<Self> {
        if scenes.is_empty() {
            return Err(GridError::InvalidDimensions("series has no days".into()));
        }
        if day_index.len() != scenes.len() {
            return Err(GridError::InvalidDimensions(format!(
                "{} day indices for {} scenes",
                day_index.len(),
                scenes.len()
            )));
        }
        if day_index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::DayIndexOrder);
        }
        let dim = land.dim();
        for (t, scene) in scenes.iter().enumerate() {
            if scene.dim() != dim {
                return Err(GridError::ShapeMismatch {
                    expected: dim,
                    got: scene.dim(),
                });
            }
            for ((r, c), &s) in scene.status.indexed_iter() {
                if (s == PixelStatus::Land) != land[[r, c]] {
                    return Err(GridError::LandMismatch {
                        day: t,
                        row: r,
                        col: c,
                    });
                }
                if space == ValueSpace::Concentration && s.is_observed() {
                    let value = scene.values[[r, c]];
                    if value <= 0.0 {
                        return Err(GridError::NonPositive {
                            day: t,
                            row: r,
                            col: c,
                            value,
                        });
                    }
                }
            }
        }
        Ok(Self {
            scenes,
            day_index,
            land,
            space,
        })
    }

    /// Series with consecutive day offsets `0..T`.
    pub fn contiguous(scenes: Vec<Scene>, land: Array2<bool>, space: ValueSpace) -> Result<Self> {
        let days = (0..scenes.len() as u32).collect();
        Self::new(scenes, days, land, space)
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn height(&self) -> usize {
        self.land.nrows()
    }

    pub fn width(&self) -> usize {
        self.land.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.land.dim()
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn scene(&self, t: usize) -> &Scene {
        &self.scenes[t]
    }

    pub fn day_index(&self) -> &[u32] {
        &self.day_index
    }

    pub fn land(&self) -> &Array2<bool> {
        &self.land
    }

    pub fn space(&self) -> ValueSpace {
        self.space
    }

    pub fn norm_stats(&self) -> Option<NormStats> {
        match self.space {
            ValueSpace::Normalized(s) => Some(s),
            _ => None,
        }
    }

    pub fn water_count(&self) -> usize {
        self.land.iter().filter(|&&l| !l).count()
    }

    pub fn observed_count(&self) -> usize {
        self.scenes.iter().map(Scene::observed_count).sum()
    }

    /// Replaces one day, keeping grid and land invariants.
    pub fn with_scene(&self, t: usize, scene: Scene) -> Result<Self> {
        let mut scenes = self.scenes.clone();
        scenes[t] = scene;
        Self::new(
            scenes,
            self.day_index.clone(),
            self.land.clone(),
            self.space,
        )
    }

    pub(crate) fn map_scenes(&self, space: ValueSpace, f: impl Fn(&Scene) -> Scene) -> Self {
        Self {
            scenes: self.scenes.iter().map(f).collect(),
            day_index: self.day_index.clone(),
            land: self.land.clone(),
            space,
        }
    }

    pub fn into_scenes(self) -> Vec<Scene> {
        self.scenes
    }
}

/// Boolean occlusion pattern; `true` marks an artificially clouded pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudMask {
    pattern: Array2<bool>,
    coverage: f64,
}

impl CloudMask {
    /// Builds a mask; land pixels are cleared from the pattern.
    pub fn from_pattern(mut pattern: Array2<bool>, land: &Array2<bool>) -> Result<Self> {
        if pattern.dim() != land.dim() {
            return Err(GridError::ShapeMismatch {
                expected: land.dim(),
                got: pattern.dim(),
            });
        }
        let mut water = 0usize;
        let mut occluded = 0usize;
        for (p, &l) in pattern.iter_mut().zip(land.iter()) {
            if l {
                *p = false;
            } else {
                water += 1;
                occluded += usize::from(*p);
            }
        }
        let coverage = if water == 0 {
            0.0
        } else {
            occluded as f64 / water as f64
        };
        Ok(Self { pattern, coverage })
    }

    pub fn empty(land: &Array2<bool>) -> Self {
        Self {
            pattern: Array2::from_elem(land.dim(), false),
            coverage: 0.0,
        }
    }

    pub fn pattern(&self) -> &Array2<bool> {
        &self.pattern
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pattern.dim()
    }

    pub fn occluded_count(&self) -> usize {
        self.pattern.iter().filter(|&&p| p).count()
    }
}
