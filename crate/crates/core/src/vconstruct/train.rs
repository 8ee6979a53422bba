use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{Adam, AdamConfig};
use super::net::{standard_normal, Batch, VConstructModel};
use super::{ArchConfig, Result, VConstructError};
use crate::grid::{gen_cloud_mask, GridError, SceneSeries, ValueSpace, DEFAULT_MAX_MISSING_FRAC};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub kl_weight: f64,
    /// The KL weight ramps linearly over this many epochs (0 = no ramp).
    pub kl_warmup_epochs: usize,
    /// Coverage of the fresh training mask, drawn uniformly per sample.
    pub coverage_range: (f64, f64),
    /// Days with more missing water pixels than this are not trained on.
    pub max_missing_frac: f64,
    /// `false` decodes from `z = mu` (a plain autoencoder when `kl_weight` is 0).
    pub sample_latent: bool,
    /// Days never used for training, e.g. held-out test days.
    pub exclude_days: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            adam: AdamConfig::default(),
            kl_weight: 1.0,
            kl_warmup_epochs: 10,
            coverage_range: (0.2, 0.6),
            max_missing_frac: DEFAULT_MAX_MISSING_FRAC,
            sample_latent: true,
            exclude_days: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VConstructError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad(format!("kl_weight {} must be >= 0", self.kl_weight));
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad(format!("learning_rate {}", self.adam.learning_rate));
        }
        let (lo, hi) = self.coverage_range;
        if !(0.0 <= lo && lo <= hi && hi <= 0.95) {
            return bad(format!(
                "coverage range ({lo}, {hi}) outside 0 <= lo <= hi <= 0.95"
            ));
        }
        if !(0.0..=1.0).contains(&self.max_missing_frac) {
            return bad(format!("max_missing_frac {}", self.max_missing_frac));
        }
        Ok(())
    }

    pub fn kl_weight_at(&self, epoch: usize) -> f64 {
        if self.kl_warmup_epochs == 0 {
            self.kl_weight
        } else {
            self.kl_weight * (epoch as f64 / self.kl_warmup_epochs as f64).min(1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    /// Series indices of the days trained on, ascending.
    pub training_days: Vec<usize>,
}

impl TrainingLog {
    /// Tab-separated `epoch, total, recon, kl, seconds`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("epoch\ttotal\trecon\tkl\tseconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.6}",
                e.epoch, e.total, e.recon, e.kl, e.seconds
            );
        }
        out
    }

    /// The same table without the timing column.
    pub fn losses_table(&self) -> String {
        let mut out = String::from("epoch\ttotal\trecon\tkl\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{}\t{:e}\t{:e}\t{:e}", e.epoch, e.total, e.recon, e.kl);
        }
        out
    }
}

struct Sample {
    complete: Array1<f32>,
    valid: Array1<bool>,
}

/// Trains on the near-complete days of a normalized series. Each epoch visits
/// the days in a fresh random order and hides a fresh random cloud mask on
/// each one.
pub fn train(
    series: &SceneSeries,
    arch: ArchConfig,
    cfg: &TrainConfig,
) -> Result<(VConstructModel<f32>, TrainingLog)> {
    cfg.validate()?;
    arch.validate()?;
    let norm = match series.space() {
        ValueSpace::Normalized(s) => s,
        other => {
            return Err(GridError::WrongSpace {
                expected: "normalized",
                found: other.name(),
            }
            .into())
        }
    };
    let (h, w) = series.dim();
    if h * w != arch.input_pixels {
        return Err(VConstructError::DimMismatch {
            what: "series pixels",
            expected: arch.input_pixels,
            got: h * w,
        });
    }
    let days: Vec<usize> = (0..series.len())
        .filter(|t| !cfg.exclude_days.contains(t))
        .filter(|&t| series.scene(t).missing_fraction() <= cfg.max_missing_frac)
        .collect();
    if days.is_empty() {
        return Err(VConstructError::NoTrainingDays);
    }
    let samples: Vec<Sample> = days
        .iter()
        .map(|&t| {
            let sc = series.scene(t);
            let valid: Array1<bool> = sc.status().iter().map(|s| s.is_observed()).collect();
            let complete: Array1<f32> = sc
                .values()
                .iter()
                .zip(&valid)
                .map(|(&v, &ok)| if ok { v as f32 } else { 0.0 })
                .collect();
            Sample { complete, valid }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VConstructModel::<f32>::new(arch, norm, &mut rng)?;
    let mut adam = Adam::new(&model, cfg.adam);
    let p = model.arch.input_pixels;
    let latent = model.arch.latent_dim;
    let land = series.land();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut batch_no = 0usize;

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let kl_w = cfg.kl_weight_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let (lo, hi) = cfg.coverage_range;
        let draws: Vec<(f64, u64)> = order
            .iter()
            .map(|_| (rng.random_range(lo..=hi), rng.random::<u64>()))
            .collect();
        let masks = draws
            .par_iter()
            .map(|&(cov, seed)| gen_cloud_mask(h, w, land, cov, seed))
            .collect::<std::result::Result<Vec<_>, _>>()?;

        let (mut tot, mut rec, mut kl) = (0.0, 0.0, 0.0);
        for (chunk_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let b = chunk.len();
            let mut batch = Batch {
                cloudy: Array2::<f32>::zeros((b, p)),
                complete: Array2::<f32>::zeros((b, p)),
                valid: Array2::from_elem((b, p), false),
            };
            for (row, &si) in chunk.iter().enumerate() {
                let s = &samples[si];
                let mask = &masks[chunk_idx * cfg.batch_size + row];
                batch.complete.row_mut(row).assign(&s.complete);
                batch.valid.row_mut(row).assign(&s.valid);
                for ((c, &v), &hidden) in batch
                    .cloudy
                    .row_mut(row)
                    .iter_mut()
                    .zip(s.complete.iter())
                    .zip(mask.pattern().iter())
                {
                    *c = if hidden { 0.0 } else { v };
                }
            }
            let eps = cfg
                .sample_latent
                .then(|| standard_normal::<f32, _>((b, latent), &mut rng));
            let (parts, grads) = model
                .backward_with_noise(&batch, eps.as_ref().map(|e| e.view()), kl_w)
                .map_err(|e| match e {
                    VConstructError::NonFiniteLoss { .. } => {
                        VConstructError::NonFiniteLoss { batch: batch_no }
                    }
                    other => other,
                })?;
            adam.update(&mut model, &grads);
            batch_no += 1;
            tot += parts.total * b as f64;
            rec += parts.recon * b as f64;
            kl += parts.kl * b as f64;
        }
        let n = samples.len() as f64;
        log.push(EpochStats {
            epoch,
            total: tot / n,
            recon: rec / n,
            kl: kl / n,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok((
        model,
        TrainingLog {
            epochs: log,
            training_days: days,
        },
    ))
}
