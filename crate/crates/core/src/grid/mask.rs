//! Artificial cloud masks.
//!
//! A mask is the super-level set of a smooth "cloudiness" field built from
//! 1–8 rotated Gaussian ellipses. The level is found by bisection so that the
//! occluded share of water pixels matches the requested coverage.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CloudMask, GridError, PixelStatus, Result, Scene};

const MAX_COVERAGE: f64 = 0.95;
const BISECTION_STEPS: usize = 200;

struct Ellipse {
    row: f64,
    col: f64,
    semi_major: f64,
    semi_minor: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Log of the unnormalized Gaussian profile, `-d²/2` in ellipse units.
    fn log_density(&self, row: f64, col: f64) -> f64 {
        let dr = row - self.row;
        let dc = col - self.col;
        let u = (dc * self.cos + dr * self.sin) / self.semi_major;
        let v = (-dc * self.sin + dr * self.cos) / self.semi_minor;
        -0.5 * (u * u + v * v)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Generates a blob-shaped occlusion covering `coverage_target` of the water
/// pixels (to within one pixel when the field has no ties).
pub fn gen_cloud_mask(
    height: usize,
    width: usize,
    land: &Array2<bool>,
    coverage_target: f64,
    seed: u64,
) -> Result<CloudMask> {
    if !(0.0..=MAX_COVERAGE).contains(&coverage_target) {
        return Err(GridError::CoverageOutOfRange(coverage_target));
    }
    if land.dim() != (height, width) {
        return Err(GridError::ShapeMismatch {
            expected: (height, width),
            got: land.dim(),
        });
    }
    let water = land.iter().filter(|&&l| !l).count();
    let target = (coverage_target * water as f64).round() as usize;
    if target == 0 {
        return Ok(CloudMask::empty(land));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8usize);
    let scale = height.max(width) as f64;
    let ellipses: Vec<Ellipse> = (0..n)
        .map(|_| {
            let a = rng.random_range(0.08..0.35) * scale;
            let b = a * rng.random_range(0.35..1.0);
            let theta = rng.random_range(0.0..PI);
            Ellipse {
                row: rng.random_range(0.0..height as f64),
                col: rng.random_range(0.0..width as f64),
                semi_major: a.max(0.5),
                semi_minor: b.max(0.5),
                cos: theta.cos(),
                sin: theta.sin(),
            }
        })
        .collect();

    let mut buf = Vec::with_capacity(n);
    let field = Array2::from_shape_fn((height, width), |(r, c)| {
        buf.clear();
        buf.extend(
            ellipses
                .iter()
                .map(|e| e.log_density(r as f64 + 0.5, c as f64 + 0.5)),
        );
        log_sum_exp(&buf)
    });

    let water_values: Vec<f64> = field
        .iter()
        .zip(land.iter())
        .filter(|(_, &l)| !l)
        .map(|(&f, _)| f)
        .collect();
    let count_above = |thr: f64| water_values.iter().filter(|&&v| v > thr).count();

    // count_above(lo) >= target > count_above(hi)
    let mut hi = water_values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut lo = water_values.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let k = count_above(mid);
        if k == target {
            lo = mid;
            break;
        }
        if k > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pattern = Array2::from_shape_fn((height, width), |(r, c)| {
        !land[[r, c]] && field[[r, c]] > lo
    });
    CloudMask::from_pattern(pattern, land)
}

/// Marks occluded water pixels as cloud. Land is never altered.
pub fn apply_mask(scene: &Scene, mask: &CloudMask) -> Result<Scene> {
    if scene.dim() != mask.dim() {
        return Err(GridError::ShapeMismatch {
            expected: scene.dim(),
            got: mask.dim(),
        });
    }
    let mut values = scene.values().clone();
    let mut status = scene.status().clone();
    for ((idx, &occluded), st) in mask.pattern().indexed_iter().zip(status.iter_mut()) {
        if occluded && *st != PixelStatus::Land {
            *st = PixelStatus::Cloud;
            values[idx] = super::MISSING;
        }
    }
    Ok(Scene::from_parts_unchecked(values, status))
}
