//! Synthetic low-rank Chl-a series.
//!
//! The complete log10 field is `X[s, t] = Σₖ uₖ(s) cₖ(t)`, an exact rank-`rank`
//! space×time matrix before noise:
//!
//! - mode 0 is a static climatology (`c₀ ≡ 1`) carrying a coastal gradient and a
//!   bright plume at the river mouth;
//! - mode 1 is a seasonal cycle, modes 2.. are faster oscillations;
//! - inside the plume rectangle the time-varying loadings (and the noise) are
//!   attenuated so that its mean temporal variance is at most 8% of the open-water
//!   value.
//!
//! A fraction of days get natural blob clouds (10–90% coverage); the remaining
//! days are near-complete (at most 1.5% missing).

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    apply_mask, gen_cloud_mask, GridError, GridRect, PixelStatus, Result, Scene, SceneSeries,
    ValueSpace,
};

const PLUME_VARIANCE_RATIO: f64 = 0.08;
const PLUME_MAX_ATTENUATION: f64 = 0.2;
const NEAR_COMPLETE_MAX_COVERAGE: f64 = 0.015;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub days: usize,
    pub rank: usize,
    /// High-temporal-homogeneity subregion.
    pub plume: GridRect,
    /// Standard deviation of i.i.d. log10 noise (open water).
    pub noise_std: f64,
    /// Approximate share of columns taken by the coastline on the left edge.
    pub land_fraction: f64,
    /// Share of days that receive natural weather clouds.
    pub cloudy_day_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            days: 400,
            rank: 3,
            plume: GridRect::new(10, 2, 22, 14),
            noise_std: 0.02,
            land_fraction: 0.1,
            cloudy_day_fraction: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GridError::InvalidDimensions(m));
        if self.height == 0 || self.width == 0 || self.days == 0 {
            return bad(format!("{}x{}x{} grid", self.days, self.height, self.width));
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if self.plume.is_empty() || !self.plume.fits(self.height, self.width) {
            return bad(format!("plume {:?} outside grid", self.plume));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {}", self.noise_std));
        }
        if !(0.0..=0.5).contains(&self.land_fraction) {
            return bad(format!(
                "land_fraction {} outside [0, 0.5]",
                self.land_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.cloudy_day_fraction) {
            return bad(format!(
                "cloudy_day_fraction {} outside [0, 1]",
                self.cloudy_day_fraction
            ));
        }
        Ok(())
    }
}

fn coastline(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Array2<bool> {
    let phase = rng.random_range(0.0..2.0 * PI);
    let (h, w) = (cfg.height, cfg.width);
    let mean_cols = cfg.land_fraction * w as f64;
    Array2::from_shape_fn((h, w), |(r, c)| {
        let wave = 1.0 + 0.5 * (2.0 * PI * r as f64 / h as f64 + phase).sin();
        (c as f64 + 0.5) < mean_cols * wave
    })
}

/// Zero-mean, unit-RMS smooth field over the water pixels.
fn smooth_random_field(
    cfg: &SynthConfig,
    water: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let scale = cfg.height.max(cfg.width) as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let r = rng.random_range(0.0..cfg.height as f64);
            let c = rng.random_range(0.0..cfg.width as f64);
            let sigma = rng.random_range(0.15..0.4) * scale;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (r, c, sigma, sign * rng.random_range(0.5..1.0))
        })
        .collect();
    let mut f: Vec<f64> = water
        .iter()
        .map(|&(r, c)| {
            bumps
                .iter()
                .map(|&(br, bc, s, a)| {
                    let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                    a * (-0.5 * d2 / (s * s)).exp()
                })
                .sum()
        })
        .collect();
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    f.iter_mut().for_each(|v| *v -= mean);
    let rms = (f.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms > 0.0 {
        f.iter_mut().for_each(|v| *v /= rms);
    }
    f
}

fn standardize(series: &mut [f64]) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    series.iter_mut().for_each(|v| *v -= mean);
    let sd = (series.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        series.iter_mut().for_each(|v| *v /= sd);
    }
}

fn temporal_coefficients(k: usize, days: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if k == 0 {
        return vec![1.0; days];
    }
    let mut c: Vec<f64> = if k == 1 {
        let p1 = rng.random_range(0.0..2.0 * PI);
        let p2 = rng.random_range(0.0..2.0 * PI);
        (0..days)
            .map(|t| {
                let x = 2.0 * PI * t as f64 / 365.25;
                (x + p1).sin() + 0.4 * (2.0 * x + p2).sin()
            })
            .collect()
    } else {
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.5..1.0),
                    rng.random_range(6.0..90.0),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        (0..days)
            .map(|t| {
                waves
                    .iter()
                    .map(|&(a, p, ph)| a * (2.0 * PI * t as f64 / p + ph).sin())
                    .sum()
            })
            .collect()
    };
    standardize(&mut c);
    c
}

struct Field {
    land: Array2<bool>,
    water: Vec<(usize, usize)>,
    /// S×T log10 values.
    values: Array2<f64>,
}

fn build_field(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Field> {
    cfg.validate()?;
    let land = coastline(cfg, rng);
    let water: Vec<(usize, usize)> = land
        .indexed_iter()
        .filter(|(_, &l)| !l)
        .map(|(idx, _)| idx)
        .collect();
    let s = water.len();
    if cfg.rank > s.min(cfg.days) {
        return Err(GridError::InvalidDimensions(format!(
            "rank {} exceeds min(days {}, water pixels {s})",
            cfg.rank, cfg.days
        )));
    }
    let in_plume: Vec<bool> = water
        .iter()
        .map(|&(r, c)| cfg.plume.contains(r, c))
        .collect();
    let n_in = in_plume.iter().filter(|&&p| p).count();
    if n_in == 0 || n_in == s {
        return Err(GridError::InvalidDimensions(
            "plume must contain some but not all water pixels".into(),
        ));
    }

    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let pr = 0.5 * (cfg.plume.row0 + cfg.plume.row1) as f64;
    let pc = cfg.plume.col0 as f64;
    let sr = 0.5 * (cfg.plume.row1 - cfg.plume.row0) as f64;
    let sc = 0.5 * (cfg.plume.col1 - cfg.plume.col0) as f64;
    let texture = smooth_random_field(cfg, &water, rng);
    let mut loadings: Vec<Vec<f64>> = vec![water
        .iter()
        .zip(&texture)
        .map(|(&(r, c), tx)| {
            let (r, c) = (r as f64, c as f64);
            let plume =
                0.6 * (-0.5 * ((r - pr) / sr).powi(2) - 0.5 * ((c - pc) / sc).powi(2)).exp();
            0.1 + 0.25 * (c / w) - 0.1 * (r / h) + 0.08 * tx + plume
        })
        .collect()];
    for k in 1..cfg.rank {
        let amp = 0.35 / (k as f64).sqrt();
        let f = smooth_random_field(cfg, &water, rng);
        loadings.push(f.into_iter().map(|v| amp * v).collect());
    }
    let temporal: Vec<Vec<f64>> = (0..cfg.rank)
        .map(|k| temporal_coefficients(k, cfg.days, rng))
        .collect();

    // Attenuate time-varying loadings inside the plume.
    let attenuation = if cfg.rank > 1 {
        let var_of = |i: usize| {
            let series: Vec<f64> = (0..cfg.days)
                .map(|t| (1..cfg.rank).map(|k| loadings[k][i] * temporal[k][t]).sum())
                .collect();
            let n = series.len() as f64;
            let m = series.iter().sum::<f64>() / n;
            series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        };
        let (mut vin, mut vout) = (0.0, 0.0);
        for i in 0..s {
            if in_plume[i] {
                vin += var_of(i);
            } else {
                vout += var_of(i);
            }
        }
        let q = (vin / n_in as f64) / (vout / (s - n_in) as f64);
        if q > 0.0 && q.is_finite() {
            PLUME_MAX_ATTENUATION.min((PLUME_VARIANCE_RATIO / q).sqrt())
        } else {
            PLUME_MAX_ATTENUATION
        }
    } else {
        PLUME_MAX_ATTENUATION
    };
    for load in loadings.iter_mut().skip(1) {
        for (v, &p) in load.iter_mut().zip(&in_plume) {
            if p {
                *v *= attenuation;
            }
        }
    }

    let mut values = Array2::zeros((s, cfg.days));
    for k in 0..cfg.rank {
        for i in 0..s {
            let u = loadings[k][i];
            for t in 0..cfg.days {
                values[[i, t]] += u * temporal[k][t];
            }
        }
    }
    if cfg.noise_std > 0.0 {
        for t in 0..cfg.days {
            for i in 0..s {
                let z: f64 = rng.sample(StandardNormal);
                let scale = if in_plume[i] { attenuation } else { 1.0 };
                values[[i, t]] += cfg.noise_std * scale * z;
            }
        }
    }
    Ok(Field {
        land,
        water,
        values,
    })
}

/// The complete log10 field as an S×T matrix (water pixels in row-major grid
/// order), together with the land mask. Identical to the values underlying
/// [`synth_series`] for the same config.
pub fn synth_log_field(cfg: &SynthConfig) -> Result<(Array2<f64>, Array2<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let field = build_field(cfg, &mut rng)?;
    Ok((field.values, field.land))
}

/// Generates a concentration-space series with natural weather clouds.
pub fn synth_series(cfg: &SynthConfig) -> Result<SceneSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let field = build_field(cfg, &mut rng)?;
    let (h, w) = (cfg.height, cfg.width);
    let mut scenes = Vec::with_capacity(cfg.days);
    for t in 0..cfg.days {
        let mut values = Array2::from_elem((h, w), super::MISSING);
        for (i, &(r, c)) in field.water.iter().enumerate() {
            values[[r, c]] = 10f64.powf(field.values[[i, t]]);
        }
        let status = field.land.mapv(|l| {
            if l {
                PixelStatus::Land
            } else {
                PixelStatus::Observed
            }
        });
        let clear = Scene::new(values, status)?;

        let coverage = if rng.random_bool(cfg.cloudy_day_fraction) {
            rng.random_range(0.1..0.9)
        } else {
            rng.random_range(0.0..NEAR_COMPLETE_MAX_COVERAGE)
        };
        let mask_seed: u64 = rng.random();
        let mask = gen_cloud_mask(h, w, &field.land, coverage, mask_seed)?;
        scenes.push(apply_mask(&clear, &mask)?);
    }
    SceneSeries::contiguous(scenes, field.land, ValueSpace::Concentration)
}

/// Mean per-pixel temporal variance of log10 values, inside and outside `rect`.
/// Each pixel's variance uses only the days it is observed.
pub fn temporal_variance(series: &SceneSeries, rect: GridRect) -> (f64, f64) {
    let (h, w) = series.dim();
    let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..h {
        for c in 0..w {
            if series.land()[[r, c]] {
                continue;
            }
            let vals: Vec<f64> = series
                .scenes()
                .iter()
                .filter_map(|s| s.value(r, c))
                .map(|v| series.space().to_log10(v))
                .collect();
            if vals.len() < 2 {
                continue;
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            if rect.contains(r, c) {
                sum_in += var;
                n_in += 1;
            } else {
                sum_out += var;
                n_out += 1;
            }
        }
    }
    (sum_in / n_in.max(1) as f64, sum_out / n_out.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_configs() {
        let mut c = SynthConfig::default();
        c.rank = 0;
        assert!(synth_series(&c).is_err());
        let mut c = SynthConfig::default();
        c.plume = GridRect::new(30, 30, 40, 40);
        assert!(synth_series(&c).is_err());
        let mut c = SynthConfig::default();
        c.days = 2;
        c.rank = 3;
        assert!(synth_series(&c).is_err());
        let mut c = SynthConfig::default();
        c.height = 0;
        assert!(synth_series(&c).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let c = SynthConfig {
            days: 30,
            ..Default::default()
        };
        assert_eq!(synth_series(&c).unwrap(), synth_series(&c).unwrap());
        let other = SynthConfig {
            seed: 1,
            ..c.clone()
        };
        assert_ne!(synth_series(&c).unwrap(), synth_series(&other).unwrap());
    }

    #[test]
    fn some_days_near_complete_some_cloudy() {
        let s = synth_series(&SynthConfig::default()).unwrap();
        let near = s
            .scenes()
            .iter()
            .filter(|d| d.missing_fraction() <= 0.02)
            .count();
        assert!(near > 100 && near < 250, "{near} near-complete days");
        assert!(s.scenes().iter().any(|d| d.missing_fraction() > 0.3));
    }

    #[test]
    fn plume_is_temporally_homogeneous() {
        for seed in 0..5 {
            for rank in 1..=4 {
                let c = SynthConfig {
                    rank,
                    seed,
                    days: 200,
                    cloudy_day_fraction: 0.0,
                    ..Default::default()
                };
                let s = synth_series(&c).unwrap();
                let (inside, outside) = temporal_variance(&s, c.plume);
                assert!(
                    inside <= 0.1 * outside,
                    "rank {rank}: {inside} vs {outside}"
                );
            }
        }
    }

    #[test]
    fn log_field_matches_series() {
        let c = SynthConfig {
            days: 20,
            cloudy_day_fraction: 0.0,
            ..Default::default()
        };
        let (field, land) = synth_log_field(&c).unwrap();
        let s = synth_series(&c).unwrap();
        assert_eq!(&land, s.land());
        let mut i = 0;
        for ((r, col), &l) in land.indexed_iter() {
            if l {
                continue;
            }
            for t in 0..c.days {
                if let Some(v) = s.scene(t).value(r, col) {
                    assert!((v.log10() - field[[i, t]]).abs() < 1e-12);
                }
            }
            i += 1;
        }
    }
}
