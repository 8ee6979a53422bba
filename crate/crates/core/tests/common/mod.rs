//! Oracles and harnesses shared by the integration tests.

#![allow(dead_code)]

use gapfill::vconstruct::{ArchConfig, Batch, VConstructModel};
use gapfill::NormStats;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub arch: Option<ArchConfig>,
    pub params: usize,
    pub failures: usize,
    /// Parameters whose perturbation crossed a ReLU kink at every step size.
    pub kinks: usize,
    pub worst_rel: f64,
}

pub fn random_arch(rng: &mut ChaCha8Rng) -> ArchConfig {
    let widths = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let n = rng.random_range(1..=3);
        (0..n).map(|_| rng.random_range(2..=8)).collect()
    };
    ArchConfig {
        input_pixels: rng.random_range(4..=20),
        attr_dims: widths(rng),
        enc_dims: widths(rng),
        latent_dim: rng.random_range(1..=5),
    }
}

/// Compares every analytic parameter gradient with central differences of
/// the batch loss at fixed reparameterization noise, in f64.
pub fn gradient_check(arch: ArchConfig, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = NormStats::new(0.0, 1.0).unwrap();
    let mut model: VConstructModel<f64> =
        VConstructModel::new(arch.clone(), norm, &mut rng).unwrap();
    for layer in model.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let p = arch.input_pixels;
    let b = rng.random_range(1..=4);
    let complete = Array2::from_shape_simple_fn((b, p), || normal(&mut rng));
    let valid = Array2::from_shape_simple_fn((b, p), || rng.random_bool(0.8));
    let complete = ndarray::Zip::from(&complete)
        .and(&valid)
        .map_collect(|&v, &ok| if ok { v } else { 0.0 });
    let cloudy = complete.mapv(|v| if rng.random_bool(0.4) { 0.0 } else { v });
    let batch = Batch {
        cloudy,
        complete,
        valid,
    };
    let eps = Array2::from_shape_simple_fn((b, arch.latent_dim), || normal(&mut rng));
    let kl_weight = rng.random_range(0.0..2.0);

    let (_, grads) = model
        .backward_with_noise(&batch, Some(eps.view()), kl_weight)
        .unwrap();
    let base_trace = model.batch_trace(&batch, Some(eps.view())).unwrap();
    let mut report = GradCheck {
        arch: Some(arch),
        ..Default::default()
    };

    let n_layers = model.layers().len();
    for li in 0..n_layers {
        let n_w = model.layers()[li].weights.len();
        let n_b = model.layers()[li].bias.len();
        for pi in 0..n_w + n_b {
            let analytic = {
                let g = &grads.layers[li];
                if pi < n_w {
                    g.weights.as_slice().unwrap()[pi]
                } else {
                    g.bias[pi - n_w]
                }
            };
            let mut numeric = None;
            let mut h = 1e-4;
            while h >= 1e-7 {
                let mut eval = |delta: f64| {
                    let mut layers = model.layers_mut();
                    let layer = &mut layers[li];
                    let slot = if pi < n_w {
                        &mut layer.weights.as_slice_mut().unwrap()[pi]
                    } else {
                        &mut layer.bias[pi - n_w]
                    };
                    let orig = *slot;
                    *slot = orig + delta;
                    let loss = model
                        .batch_loss(&batch, Some(eps.view()), kl_weight)
                        .unwrap();
                    let trace = model.batch_trace(&batch, Some(eps.view())).unwrap();
                    let mut layers = model.layers_mut();
                    let layer = &mut layers[li];
                    if pi < n_w {
                        layer.weights.as_slice_mut().unwrap()[pi] = orig;
                    } else {
                        layer.bias[pi - n_w] = orig;
                    }
                    (loss.total, trace)
                };
                let (lp, tp) = eval(h);
                let (lm, tm) = eval(-h);
                if tp == base_trace && tm == base_trace {
                    numeric = Some((lp - lm) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            report.params += 1;
            match numeric {
                None => report.kinks += 1,
                Some(n) => {
                    let diff = (analytic - n).abs();
                    let scale = analytic.abs().max(n.abs());
                    let rel = if scale > 0.0 { diff / scale } else { 0.0 };
                    if diff > 1e-6 {
                        report.worst_rel = report.worst_rel.max(rel);
                    }
                    if diff > 1e-6 && rel > 1e-4 {
                        report.failures += 1;
                    }
                }
            }
        }
    }
    report
}

/// The architecture named in the gradient-check example.
pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        input_pixels: 16,
        attr_dims: vec![8, 4, 2],
        enc_dims: vec![8, 4, 2],
        latent_dim: 4,
    }
}

/// KL(N(mu, e^logvar) ‖ N(0, 1)) by composite Simpson integration of
/// `q log(q / p)` over mu ± 14σ.
pub fn kl_numeric(mu: f64, logvar: f64) -> f64 {
    let sd = (0.5 * logvar).exp();
    let (a, b) = (mu - 14.0 * sd, mu + 14.0 * sd);
    let n = 200_000;
    let h = (b - a) / n as f64;
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI).ln();
    let f = |z: f64| {
        let lq = ln_norm - 0.5 * logvar - 0.5 * ((z - mu) / sd).powi(2);
        let lp = ln_norm - 0.5 * z * z;
        lq.exp() * (lq - lp)
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// One pass over the selected pairs.
pub fn rmse_oracle(pred: &[f64], truth: &[f64], mask: &[bool]) -> f64 {
    let mut acc = (0.0, 0.0);
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - truth[i];
            acc = (acc.0 + d * d, acc.1 + 1.0);
        }
    }
    (acc.0 / acc.1).sqrt()
}

/// One pass with a running (Welford) mean for the total sum of squares.
pub fn r2_oracle(pred: &[f64], truth: &[f64], mask: &[bool]) -> f64 {
    let (mut n, mut mean, mut m2, mut sse) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        if mask[i] {
            n += 1.0;
            let delta = truth[i] - mean;
            mean += delta / n;
            m2 += delta * (truth[i] - mean);
            sse += (pred[i] - truth[i]).powi(2);
        }
    }
    1.0 - sse / m2
}

/// Fill settings tight enough to recover exactly low-rank data.
pub fn exact_dineof_cfg() -> gapfill::dineof::DineofConfig {
    gapfill::dineof::DineofConfig {
        max_modes: Some(8),
        conv_tol: 1e-10,
        max_iters_per_k: 3000,
        remove_mean: false,
        svd: gapfill::dineof::SvdOptions {
            tol: 1e-12,
            max_iter: 2000,
            oversample: 5,
        },
        ..Default::default()
    }
}

#[derive(Debug)]
pub struct RecoveryCase {
    pub dims: (usize, usize),
    pub rank: usize,
    pub missing_frac: f64,
    pub k_star: usize,
    pub max_err: f64,
}

/// A random rank-r matrix (r ≤ 4, dims in 30..=60) with up to 40% of its
/// entries hidden, filled by DINEOF.
pub fn exact_recovery_case(seed: u64) -> RecoveryCase {
    use gapfill::dineof::{dineof_fill, DataMatrix};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, t) = (rng.random_range(30..=60), rng.random_range(30..=60));
    let r = rng.random_range(1..=4);
    let frac = rng.random_range(0.1..=0.4);
    let a = Array2::from_shape_simple_fn((s, r), || normal(&mut rng));
    let b = Array2::from_shape_simple_fn((r, t), || normal(&mut rng));
    let truth = a.dot(&b);
    let missing = Array2::from_shape_simple_fn((s, t), || rng.random_bool(frac));
    let mut dm = DataMatrix::from_matrix(truth.clone());
    for ((i, j), &m) in missing.indexed_iter() {
        if m {
            dm.matrix[[i, j]] = f64::NAN;
            dm.missing[[i, j]] = true;
        }
    }
    let mut cfg = exact_dineof_cfg();
    cfg.seed = seed;
    let (filled, _, report) = dineof_fill(&dm, &cfg).unwrap();
    let max_err = missing
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|(ix, _)| (filled[ix] - truth[ix]).abs())
        .fold(0.0, f64::max);
    RecoveryCase {
        dims: (s, t),
        rank: r,
        missing_frac: frac,
        k_star: report.k_star,
        max_err,
    }
}

/// `(ours, oracle)` Frobenius errors of the best rank-k approximation of a
/// random matrix up to 30×30; the oracle is a dense SVD from nalgebra.
pub fn svd_oracle_case(seed: u64) -> ((usize, usize, usize), f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (rng.random_range(2..=30), rng.random_range(2..=30));
    let k = rng.random_range(1..=m.min(n));
    let a = Array2::from_shape_simple_fn((m, n), || normal(&mut rng));
    let ours = gapfill::dineof::truncated_svd(&a, k).unwrap().reconstruct();
    let ours_err = (&a - &ours).mapv(|v| v * v).sum().sqrt();

    let dense = nalgebra::DMatrix::from_fn(m, n, |i, j| a[[i, j]]);
    let svd = dense.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut approx = nalgebra::DMatrix::<f64>::zeros(m, n);
    for &i in &order[..k] {
        approx += svd.singular_values[i] * u.column(i) * vt.row(i);
    }
    let oracle_err = (dense - approx).norm();
    ((m, n, k), ours_err, oracle_err)
}

/// A normalized 16×16 synthetic series and a model trained on it briefly.
pub fn small_trained(epochs: usize, seed: u64) -> (VConstructModel<f32>, gapfill::SceneSeries) {
    use gapfill::grid::{log_transform, normalize, synth_series, GridRect, SynthConfig};
    use gapfill::vconstruct::{train, TrainConfig};
    let cfg = SynthConfig {
        height: 16,
        width: 16,
        days: 120,
        plume: GridRect::new(5, 1, 11, 7),
        seed,
        ..Default::default()
    };
    let series = normalize(&log_transform(&synth_series(&cfg).unwrap()).unwrap())
        .unwrap()
        .0;
    let arch = ArchConfig {
        input_pixels: 256,
        attr_dims: vec![64, 32, 16],
        enc_dims: vec![64, 32, 16],
        latent_dim: 8,
    };
    let tcfg = TrainConfig {
        epochs,
        seed,
        ..Default::default()
    };
    let (model, _) = train(&series, arch, &tcfg).unwrap();
    (model, series)
}
