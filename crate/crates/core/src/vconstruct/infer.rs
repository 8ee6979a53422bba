use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::net::{standard_normal, VConstructModel};
use super::{f64_of, real, Real, Result, VConstructError};
use crate::grid::{PixelStatus, Scene, SceneSeries, ValueSpace};

/// Where inference draws `z` from.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentPrior {
    StandardNormal,
    /// Diagonal Gaussian fitted to the encoder's outputs on training images.
    Diagonal {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

impl LatentPrior {
    /// `n` draws, one row each, consuming `rng` row by row.
    pub fn sample<F: Real, R: Rng + ?Sized>(
        &self,
        n: usize,
        latent: usize,
        rng: &mut R,
    ) -> Array2<F> {
        let mut z = standard_normal::<F, _>((n, latent), rng);
        if let Self::Diagonal { mean, std } = self {
            for mut row in z.rows_mut() {
                for ((v, &m), &s) in row.iter_mut().zip(mean).zip(std) {
                    *v = real(m + s * f64_of(*v));
                }
            }
        }
        z
    }
}

/// Fits a diagonal Gaussian to the aggregate posterior over `days`:
/// per dimension, mean of `mu` and `Var(mu) + E[exp(logvar)]`.
pub fn fit_latent_prior<F: Real>(
    model: &VConstructModel<F>,
    series: &SceneSeries,
    days: &[usize],
) -> Result<LatentPrior> {
    if days.is_empty() {
        return Err(VConstructError::NoTrainingDays);
    }
    if series.space() != ValueSpace::Normalized(model.norm) {
        return Err(VConstructError::NormMismatch);
    }
    let p = model.arch.input_pixels;
    let mut x = Array2::<F>::zeros((days.len(), p));
    for (row, &t) in days.iter().enumerate() {
        let (input, _) = normalized_input(model, series.scene(t), series.space())?;
        x.row_mut(row).assign(&input.row(0));
    }
    let dist = model.encode(x.view())?;
    let n = days.len() as f64;
    let latent = model.arch.latent_dim;
    let mut mean = vec![0.0; latent];
    let mut std = vec![0.0; latent];
    for j in 0..latent {
        let mu: Vec<f64> = dist.mu.column(j).iter().map(|&v| f64_of(v)).collect();
        let m = mu.iter().sum::<f64>() / n;
        let var_mu = mu.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let e_var = dist
            .logvar
            .column(j)
            .iter()
            .map(|&v| f64_of(v).exp())
            .sum::<f64>()
            / n;
        mean[j] = m;
        std[j] = (var_mu + e_var).sqrt();
    }
    Ok(LatentPrior::Diagonal { mean, std })
}

/// Flattened normalized input (missing → 0) and the normalized value of every
/// observed pixel.
fn normalized_input<F: Real>(
    model: &VConstructModel<F>,
    scene: &Scene,
    space: ValueSpace,
) -> Result<(Array2<F>, Vec<Option<f64>>)> {
    let (h, w) = scene.dim();
    if h * w != model.arch.input_pixels {
        return Err(VConstructError::DimMismatch {
            what: "scene pixels",
            expected: model.arch.input_pixels,
            got: h * w,
        });
    }
    let norm = model.norm;
    let to_norm = |v: f64| -> Result<f64> {
        match space {
            ValueSpace::Concentration => Ok(norm.from_concentration(v)),
            ValueSpace::Log10 => Ok(norm.forward(v)),
            ValueSpace::Normalized(s) if s == norm => Ok(v),
            ValueSpace::Normalized(_) => Err(VConstructError::NormMismatch),
        }
    };
    let mut input = Array2::<F>::zeros((1, h * w));
    let mut observed = Vec::with_capacity(h * w);
    for ((idx, &st), &v) in scene.status().indexed_iter().zip(scene.values().iter()) {
        let k = idx.0 * w + idx.1;
        if st.is_observed() {
            let z = to_norm(v)?;
            input[[0, k]] = real(z);
            observed.push(Some(z));
        } else {
            observed.push(None);
        }
    }
    Ok((input, observed))
}

/// Replaces cloud pixels with `decoded` (normalized), mapped through `out`.
/// Observed pixels go through `keep`; land stays land.
fn composite<F: Real>(
    scene: &Scene,
    decoded: ndarray::ArrayView1<F>,
    keep: impl Fn(f64) -> f64,
    out: impl Fn(f64) -> f64,
) -> Result<Scene> {
    let (_, w) = scene.dim();
    let mut values = scene.values().clone();
    let mut status = scene.status().clone();
    for ((r, c), st) in status.indexed_iter_mut() {
        match *st {
            PixelStatus::Observed => values[[r, c]] = keep(values[[r, c]]),
            PixelStatus::Cloud => {
                values[[r, c]] = out(f64_of(decoded[r * w + c]));
                *st = PixelStatus::Observed;
            }
            PixelStatus::Land => {}
        }
    }
    Ok(Scene::new(values, status)?)
}

/// One sample in normalized space: cloud pixels take the decoder output,
/// observed pixels are copied verbatim. `scene` must be normalized with the
/// model's statistics.
pub fn reconstruct_normalized<F: Real, R: Rng + ?Sized>(
    model: &VConstructModel<F>,
    scene: &Scene,
    rng: &mut R,
) -> Result<Scene> {
    let space = ValueSpace::Normalized(model.norm);
    let mut out = sample_in(model, scene, space, 1, rng, |s, d| {
        composite(s, d, |v| v, |z| z)
    })?;
    Ok(out.pop().expect("n = 1"))
}

/// One sample in concentration space. Observed pixels are copied verbatim
/// when `space` is concentration and converted otherwise.
pub fn reconstruct<F: Real, R: Rng + ?Sized>(
    model: &VConstructModel<F>,
    scene: &Scene,
    space: ValueSpace,
    rng: &mut R,
) -> Result<Scene> {
    let mut out = sample_ensemble(model, scene, space, 1, rng)?;
    Ok(out.pop().expect("n = 1"))
}

/// `n` samples decoded as one batch; member 0 equals [`reconstruct`] with the
/// same rng state.
pub fn sample_ensemble<F: Real, R: Rng + ?Sized>(
    model: &VConstructModel<F>,
    scene: &Scene,
    space: ValueSpace,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Scene>> {
    let norm = model.norm;
    sample_in(model, scene, space, n, rng, |s, d| {
        composite(
            s,
            d,
            |v| space.to_concentration(v),
            |z| norm.to_concentration(z),
        )
    })
}

const DECODE_CHUNK: usize = 256;

fn sample_in<F: Real, R: Rng + ?Sized>(
    model: &VConstructModel<F>,
    scene: &Scene,
    space: ValueSpace,
    n: usize,
    rng: &mut R,
    finish: impl Fn(&Scene, ndarray::ArrayView1<F>) -> Result<Scene>,
) -> Result<Vec<Scene>> {
    if n == 0 {
        return Err(VConstructError::InvalidConfig(
            "ensemble size must be >= 1".into(),
        ));
    }
    let (input, _) = normalized_input(model, scene, space)?;
    let attr = model.attr_forward(input.view())?;
    let z: Array2<F> = model.prior.sample(n, model.arch.latent_dim, rng);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let len = DECODE_CHUNK.min(n - start);
        let a = attr.broadcast_row(0, len);
        let decoded = model.decode(z.slice(s![start..start + len, ..]), &a)?;
        for row in decoded.axis_iter(Axis(0)) {
            out.push(finish(scene, row)?);
        }
        start += len;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedMember {
    pub index: usize,
    pub rmse: f64,
}

/// Orders ensemble members by RMSE against point measurements
/// `(row, col, concentration)`, ties broken by member index.
pub fn rank_by_field_truth(
    ensemble: &[Scene],
    cloudy: &Scene,
    points: &[(usize, usize, f64)],
) -> Result<Vec<RankedMember>> {
    if ensemble.is_empty() {
        return Err(VConstructError::EmptyEnsemble);
    }
    let (h, w) = cloudy.dim();
    for &(row, col, _) in points {
        if row >= h || col >= w {
            return Err(VConstructError::TruthOutOfBounds { row, col });
        }
        if cloudy.status()[[row, col]] == PixelStatus::Land {
            return Err(VConstructError::TruthOnLand { row, col });
        }
    }
    if !points
        .iter()
        .any(|&(r, c, _)| cloudy.status()[[r, c]] == PixelStatus::Cloud)
    {
        return Err(VConstructError::NoTruthInMissing);
    }
    let mut ranked = Vec::with_capacity(ensemble.len());
    for (index, member) in ensemble.iter().enumerate() {
        if member.dim() != (h, w) {
            return Err(VConstructError::DimMismatch {
                what: "ensemble member pixels",
                expected: h * w,
                got: member.height() * member.width(),
            });
        }
        let sse: f64 = points
            .iter()
            .map(|&(r, c, v)| (member.values()[[r, c]] - v).powi(2))
            .sum();
        ranked.push(RankedMember {
            index,
            rmse: (sse / points.len() as f64).sqrt(),
        });
    }
    ranked.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.index.cmp(&b.index)));
    Ok(ranked)
}
