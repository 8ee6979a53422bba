use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EvalError, Result};
use crate::dineof::{dineof_reconstruct, DineofConfig};
use crate::grid::{GridError, SceneSeries, ValueSpace};
use crate::vconstruct::{reconstruct_normalized, sample_ensemble, VConstructModel};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Timed single reconstructions, after one discarded warm-up.
    pub n_reconstructions: usize,
    /// Size of the timed ensemble; 0 skips it.
    pub ensemble_size: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_reconstructions: 101,
            ensemble_size: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedReport {
    /// Series index of the reconstructed scene (the one with most cloud).
    pub day: usize,
    pub reconstruction_seconds: Vec<f64>,
    pub median_seconds: f64,
    pub dineof_seconds: f64,
    /// `dineof_seconds / median_seconds`.
    pub ratio: f64,
    pub ensemble_size: usize,
    pub ensemble_seconds: Option<f64>,
}

impl SpeedReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "measurement\tseconds");
        let _ = writeln!(
            out,
            "vconstruct single (median of {}, day {})\t{:.6e}",
            self.reconstruction_seconds.len(),
            self.day,
            self.median_seconds
        );
        let _ = writeln!(out, "dineof full series\t{:.6e}", self.dineof_seconds);
        if let Some(e) = self.ensemble_seconds {
            let _ = writeln!(
                out,
                "vconstruct ensemble of {}\t{:.6e}",
                self.ensemble_size, e
            );
        }
        let _ = writeln!(out, "# ratio dineof/vconstruct = {:.1}", self.ratio);
        out
    }
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times trained-model reconstruction of the cloudiest day of a normalized
/// series against one full DINEOF run on the same series.
pub fn bench_speed(
    model: &VConstructModel<f32>,
    series: &SceneSeries,
    dineof_cfg: &DineofConfig,
    cfg: &BenchConfig,
) -> Result<SpeedReport> {
    if cfg.n_reconstructions == 0 {
        return Err(EvalError::InvalidConfig(
            "n_reconstructions must be >= 1".into(),
        ));
    }
    if !matches!(series.space(), ValueSpace::Normalized(_)) {
        return Err(GridError::WrongSpace {
            expected: "normalized",
            found: series.space().name(),
        }
        .into());
    }
    let day = (0..series.len())
        .max_by_key(|&t| (series.scene(t).cloud_count(), std::cmp::Reverse(t)))
        .ok_or_else(|| EvalError::InvalidConfig("empty series".into()))?;
    let scene = series.scene(day);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    reconstruct_normalized(model, scene, &mut rng)?;
    let mut times = Vec::with_capacity(cfg.n_reconstructions);
    for _ in 0..cfg.n_reconstructions {
        let t0 = Instant::now();
        let out = reconstruct_normalized(model, scene, &mut rng)?;
        times.push(t0.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    let median_seconds = median(&times);

    let ensemble_seconds = if cfg.ensemble_size > 0 {
        let space = series.space();
        let t0 = Instant::now();
        let out = sample_ensemble(model, scene, space, cfg.ensemble_size, &mut rng)?;
        let e = t0.elapsed().as_secs_f64();
        std::hint::black_box(out);
        Some(e)
    } else {
        None
    };

    let t0 = Instant::now();
    let out = dineof_reconstruct(series, dineof_cfg)?;
    let dineof_seconds = t0.elapsed().as_secs_f64();
    std::hint::black_box(out);

    Ok(SpeedReport {
        day,
        reconstruction_seconds: times,
        median_seconds,
        dineof_seconds,
        ratio: dineof_seconds / median_seconds.max(f64::MIN_POSITIVE),
        ensemble_size: cfg.ensemble_size,
        ensemble_seconds,
    })
}
