mod common;

use gapfill::grid::{
    apply_mask, gen_cloud_mask, log_transform, normalize, synth_series, GridRect, SynthConfig,
};
use gapfill::vconstruct::{
    decode_model, encode_model, kl_term, rank_by_field_truth, recon_term, reconstruct,
    reconstruct_normalized, sample_ensemble, train, ArchConfig, Batch, LatentDistribution,
    TrainConfig, VConstructModel,
};
use gapfill::{NormStats, PixelStatus, Scene, ValueSpace};
use ndarray::{array, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_norm() -> NormStats {
    NormStats::new(0.0, 1.0).unwrap()
}

#[test]
fn kl_closed_form_and_integration_oracle() {
    let zero = Array1::<f64>::zeros(3);
    assert_eq!(kl_term(zero.view(), zero.view()), 0.0);
    let kl = kl_term(array![1.0].view(), array![0.0].view());
    assert!((kl - 0.5).abs() < 1e-12);
    assert!((common::kl_numeric(1.0, 0.0) - 0.5).abs() < 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mu: f64 = rng.random_range(-3.0..3.0);
        let lv: f64 = rng.random_range(-3.0..3.0);
        let closed = kl_term(array![mu].view(), array![lv].view());
        assert!(
            (closed - common::kl_numeric(mu, lv)).abs() < 1e-6,
            "{mu} {lv}"
        );
    }
}

proptest! {
    #[test]
    fn kl_is_non_negative(
        mu in proptest::collection::vec(-5.0f64..5.0, 1..8),
        lv in proptest::collection::vec(-10.0f64..10.0, 8),
    ) {
        let lv = &lv[..mu.len()];
        let kl = kl_term(Array1::from(mu.clone()).view(), Array1::from(lv.to_vec()).view());
        prop_assert!(kl >= 0.0);
        if mu.iter().chain(lv).any(|v| v.abs() > 1e-3) {
            prop_assert!(kl > 1e-12);
        }
    }

    #[test]
    fn compositing_keeps_observed_bits(seed in 0u64..1000, cov in 0.0f64..0.9) {
        let arch = ArchConfig { input_pixels: 36, attr_dims: vec![8, 4], enc_dims: vec![6], latent_dim: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model: VConstructModel<f32> = VConstructModel::new(arch, unit_norm(), &mut rng).unwrap();
        let land = Array2::from_shape_fn((6, 6), |(r, c)| c == 0 && r < 2);
        let values = Array2::from_shape_fn((6, 6), |_| rng.random_range(-2.0..2.0));
        let status = land.mapv(|l| if l { PixelStatus::Land } else { PixelStatus::Observed });
        let scene = Scene::new(values, status).unwrap();
        let mask = gen_cloud_mask(6, 6, &land, cov, seed).unwrap();
        let cloudy = apply_mask(&scene, &mask).unwrap();
        let out = reconstruct_normalized(&model, &cloudy, &mut rng).unwrap();
        for ((ix, st), v) in cloudy.status().indexed_iter().zip(cloudy.values()) {
            match st {
                PixelStatus::Observed => prop_assert_eq!(out.values()[ix].to_bits(), v.to_bits()),
                PixelStatus::Cloud => {
                    prop_assert!(out.status()[ix].is_observed() && out.values()[ix].is_finite())
                }
                PixelStatus::Land => prop_assert_eq!(out.status()[ix], PixelStatus::Land),
            }
        }
    }
}

#[test]
fn reparameterize_monte_carlo() {
    let n = 100_000;
    let dist = LatentDistribution {
        mu: Array2::<f64>::zeros((n, 4)),
        logvar: Array2::<f64>::zeros((n, 4)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = dist.reparameterize(&mut rng);
    let mean = z.mean_axis(Axis(0)).unwrap();
    let var = z.var_axis(Axis(0), 0.0);
    for j in 0..4 {
        assert!(mean[j].abs() < 0.02, "{mean}");
        assert!((var[j] - 1.0).abs() < 0.05, "{var}");
    }
    let again = dist.reparameterize(&mut ChaCha8Rng::seed_from_u64(11));
    assert_eq!(z, again);
}

#[test]
fn clamped_logvar_collapses_to_mean() {
    let arch = common::tiny_arch();
    let mut model: VConstructModel<f64> =
        VConstructModel::zeros(arch.clone(), unit_norm()).unwrap();
    model.logvar_head.bias.fill(-40.0);
    model.mu_head.bias.fill(0.3);
    let x = Array2::from_elem((2, arch.input_pixels), 0.5);
    let dist = model.encode(x.view()).unwrap();
    assert!(dist.logvar.iter().all(|&v| v == -20.0));
    let z = dist.reparameterize(&mut ChaCha8Rng::seed_from_u64(1));
    assert!(z.iter().all(|&v| (v - 0.3).abs() < 5.0 * (-10f64).exp()));
}

#[test]
fn full_size_shape_chain() {
    let arch = ArchConfig::paper();
    assert_eq!(arch.attr_dims, vec![1024, 512, 128]);
    assert_eq!(arch.enc_dims, vec![1024, 512, 256]);
    assert_eq!(arch.latent_dim, 256);
    assert_eq!(arch.dec_dims(), vec![384, 512, 1024, 62_500]);
    assert_eq!(arch.skip_dims(), vec![62_500, 1024, 512]);
    let model: VConstructModel<f32> = VConstructModel::zeros(arch, unit_norm()).unwrap();
    let x = Array2::<f32>::zeros((1, 62_500));
    let attr = model.attr_forward(x.view()).unwrap();
    assert_eq!(attr.attr.dim(), (1, 128));
    assert!(attr.attr.iter().all(|&v| v == 0.0));
    let dist = model.encode(x.view()).unwrap();
    assert_eq!((dist.mu.ncols(), dist.logvar.ncols()), (256, 256));
    assert!(dist.mu.iter().chain(dist.logvar.iter()).all(|&v| v == 0.0));
    let z = Array2::<f32>::zeros((1, 256));
    assert_eq!(model.decode(z.view(), &attr).unwrap().dim(), (1, 62_500));
}

#[test]
fn skip_delta_is_additive() {
    let arch = common::tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model: VConstructModel<f64> =
        VConstructModel::new(arch.clone(), unit_norm(), &mut rng).unwrap();
    let x = Array2::from_shape_simple_fn((1, arch.input_pixels), || rng.random_range(-1.0..1.0));
    let attr = model.attr_forward(x.view()).unwrap();
    let z = Array2::from_shape_simple_fn((1, arch.latent_dim), || rng.random_range(-1.0..1.0));
    let base = model.decode_preactivations(z.view(), &attr).unwrap();
    let n = base.len();
    for s in 0..attr.skips.len() {
        let mut doubled = attr.clone();
        doubled.skips[s] *= 2.0;
        let pre = model.decode_preactivations(z.view(), &doubled).unwrap();
        let layer = n - 1 - s;
        for i in 0..layer {
            assert_eq!(pre[i], base[i]);
        }
        let delta = &pre[layer] - &base[layer];
        let diff = (&delta - &attr.skips[s])
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(diff < 1e-12);
    }
}

#[test]
fn recon_gradient_vanishes_at_a_perfect_fit() {
    // With zero weights the output is the cloudy input (the last skip), so a
    // target equal to the input is fitted exactly.
    let arch = common::tiny_arch();
    let model: VConstructModel<f64> = VConstructModel::zeros(arch.clone(), unit_norm()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array2::from_shape_simple_fn((2, arch.input_pixels), || rng.random_range(-1.0..1.0));
    let batch = Batch {
        cloudy: x.clone(),
        complete: x.clone(),
        valid: Array2::from_elem(x.dim(), true),
    };
    let (parts, grads) = model.backward_with_noise(&batch, None, 0.0).unwrap();
    assert_eq!(parts.recon, 0.0);
    assert_eq!(recon_term(x.row(0), x.row(0), batch.valid.row(0)), 0.0);
    for g in &grads.layers {
        assert!(g.weights.iter().chain(g.bias.iter()).all(|&v| v == 0.0));
    }
}

#[test]
fn gradients_are_deterministic() {
    let arch = common::tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model: VConstructModel<f64> =
        VConstructModel::new(arch.clone(), unit_norm(), &mut rng).unwrap();
    let x = Array2::from_shape_simple_fn((3, arch.input_pixels), || rng.random_range(-1.0..1.0));
    let batch = Batch {
        cloudy: x.mapv(|v| if v > 0.5 { 0.0 } else { v }),
        complete: x.clone(),
        valid: Array2::from_elem(x.dim(), true),
    };
    let a = model
        .backward(&batch, &mut ChaCha8Rng::seed_from_u64(1), 1.0)
        .unwrap();
    let b = model
        .backward(&batch, &mut ChaCha8Rng::seed_from_u64(1), 1.0)
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn deterministic_autoencoder_loss_does_not_rise() {
    let cfg = SynthConfig {
        height: 12,
        width: 12,
        days: 50,
        plume: GridRect::new(3, 1, 9, 6),
        cloudy_day_fraction: 0.0,
        seed: 5,
        ..Default::default()
    };
    let series = normalize(&log_transform(&synth_series(&cfg).unwrap()).unwrap())
        .unwrap()
        .0;
    let tcfg = TrainConfig {
        epochs: 10,
        kl_weight: 0.0,
        sample_latent: false,
        max_missing_frac: 1.0,
        seed: 5,
        ..Default::default()
    };
    let (_, log) = train(&series, ArchConfig::desk_for(144), &tcfg).unwrap();
    assert_eq!(log.training_days.len(), 50);
    for w in log.epochs.windows(2) {
        assert!(w[1].total <= w[0].total * 1.05, "{}", log.to_table());
        assert_eq!(w[1].total, w[1].recon);
    }
}

#[test]
fn validation_loss_falls_over_training() {
    let series =
        normalize(&log_transform(&synth_series(&SynthConfig::default()).unwrap()).unwrap())
            .unwrap()
            .0;
    let val_day = (0..series.len())
        .rev()
        .find(|&t| series.scene(t).missing_fraction() == 0.0)
        .unwrap();
    let (h, w) = series.dim();
    let scene = series.scene(val_day);
    let mask = gen_cloud_mask(h, w, series.land(), 0.4, 99).unwrap();
    let complete: Array1<f32> = scene
        .values()
        .iter()
        .map(|&v| if v.is_finite() { v as f32 } else { 0.0 })
        .collect();
    let valid: Array1<bool> = scene.status().iter().map(|s| s.is_observed()).collect();
    let cloudy: Array1<f32> = complete
        .iter()
        .zip(mask.pattern().iter())
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect();
    let batch = Batch {
        cloudy: cloudy.insert_axis(Axis(0)),
        complete: complete.insert_axis(Axis(0)),
        valid: valid.insert_axis(Axis(0)),
    };
    let base = TrainConfig {
        exclude_days: vec![val_day],
        seed: 21,
        ..Default::default()
    };
    let val_loss = |epochs| {
        let cfg = TrainConfig {
            epochs,
            ..base.clone()
        };
        let (m, _) = train(&series, ArchConfig::desk(), &cfg).unwrap();
        let eps = Array2::<f32>::zeros((1, m.arch.latent_dim));
        m.batch_loss(&batch, Some(eps.view()), 1.0).unwrap().recon
    };
    let first = val_loss(1);
    let last = val_loss(150);
    assert!(last < first, "epoch 1 {first}, epoch 150 {last}");
}

#[test]
fn reconstruction_ensembles_and_ranking() {
    let (model, series) = common::small_trained(5, 3);
    let (h, w) = series.dim();
    let day = (0..series.len())
        .find(|&t| series.scene(t).missing_fraction() == 0.0)
        .unwrap();
    let mask = gen_cloud_mask(h, w, series.land(), 0.4, 7).unwrap();
    let cloudy = apply_mask(series.scene(day), &mask).unwrap();
    let space = series.space();

    let a = reconstruct(&model, &cloudy, space, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = reconstruct(&model, &cloudy, space, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut differs = false;
    for ((ix, st), v) in cloudy.status().indexed_iter().zip(cloudy.values()) {
        match st {
            PixelStatus::Observed => {
                let c = space.to_concentration(*v);
                assert_eq!(a.values()[ix], c);
                assert_eq!(b.values()[ix], c);
            }
            PixelStatus::Cloud => {
                assert!(a.status()[ix].is_observed() && a.values()[ix] > 0.0);
                differs |= a.values()[ix] != b.values()[ix];
            }
            PixelStatus::Land => assert_eq!(a.status()[ix], PixelStatus::Land),
        }
    }
    assert!(differs);

    let one =
        sample_ensemble(&model, &cloudy, space, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(one[0], a);

    let ens = sample_ensemble(
        &model,
        &cloudy,
        space,
        100,
        &mut ChaCha8Rng::seed_from_u64(5),
    )
    .unwrap();
    let cloud: Vec<(usize, usize)> = cloudy
        .status()
        .indexed_iter()
        .filter(|(_, s)| **s == PixelStatus::Cloud)
        .map(|(ix, _)| ix)
        .collect();
    let max_std = cloud
        .iter()
        .map(|&ix| {
            let v: Vec<f64> = ens.iter().map(|m| m.values()[ix]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        })
        .fold(0.0, f64::max);
    assert!(max_std > 0.0);

    let members = &ens[..50];
    let points: Vec<(usize, usize, f64)> = cloud
        .iter()
        .step_by(7)
        .map(|&(r, c)| {
            (
                r,
                c,
                space.to_concentration(series.scene(day).values()[[r, c]]),
            )
        })
        .collect();
    let ranked = rank_by_field_truth(members, &cloudy, &points).unwrap();
    assert_eq!(ranked.len(), 50);
    assert!(ranked[0].rmse <= ranked[25].rmse);
    assert!(ranked.windows(2).all(|p| p[0].rmse <= p[1].rmse));

    let exact_idx = 17;
    let mut with_exact = members.to_vec();
    let mut vals = with_exact[exact_idx].values().clone();
    for &(r, c, v) in &points {
        vals[[r, c]] = v;
    }
    with_exact[exact_idx] = Scene::new(vals, with_exact[exact_idx].status().clone()).unwrap();
    let ranked = rank_by_field_truth(&with_exact, &cloudy, &points).unwrap();
    assert_eq!((ranked[0].index, ranked[0].rmse), (exact_idx, 0.0));
    let single = rank_by_field_truth(&with_exact[..1], &cloudy, &points).unwrap();
    assert_eq!(single[0].index, 0);
}

#[test]
fn saved_model_reconstructs_identically() {
    let (model, series) = common::small_trained(2, 4);
    let loaded = decode_model(&encode_model(&model)).unwrap();
    assert_eq!(loaded, model);
    let (h, w) = series.dim();
    let mask = gen_cloud_mask(h, w, series.land(), 0.5, 3).unwrap();
    let cloudy = apply_mask(series.scene(0), &mask).unwrap();
    let space = series.space();
    let a = reconstruct(&model, &cloudy, space, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = reconstruct(&loaded, &cloudy, space, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    let wrong = ValueSpace::Normalized(NormStats::new(1.0, 2.0).unwrap());
    assert!(reconstruct(&model, &cloudy, wrong, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
}
