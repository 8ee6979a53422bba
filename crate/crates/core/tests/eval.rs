mod common;

use gapfill::eval::{
    r2, rmse, run_experiment, Method, MetricsReport, MetricsSpace, Protocol, RegionSpec,
};
use gapfill::grid::{synth_series, GridRect, SynthConfig};
use gapfill::vconstruct::{ArchConfig, TrainConfig};
use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn metrics_match_one_pass_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(2..200);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let truth: Vec<f64> = (0..n).map(|_| scale * common::normal(&mut rng)).collect();
        let pred: Vec<f64> = truth
            .iter()
            .map(|t| t + 0.3 * scale * common::normal(&mut rng))
            .collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        mask[0] = true;
        mask[1] = true;
        let (p, t, m) = (
            Array1::from(pred.clone()),
            Array1::from(truth.clone()),
            Array1::from(mask.clone()),
        );
        let e = rmse(p.view(), t.view(), m.view()).unwrap();
        let d = r2(p.view(), t.view(), m.view()).unwrap();
        let eo = common::rmse_oracle(&pred, &truth, &mask);
        let d_o = common::r2_oracle(&pred, &truth, &mask);
        assert!((e - eo).abs() <= 1e-12 * eo.max(1.0), "{e} {eo}");
        assert!((d - d_o).abs() <= 1e-12, "{d} {d_o}");
    }
}

#[test]
fn r2_reference_cases() {
    let t = Array1::from(vec![0.2, 0.5, 0.9, 1.4]);
    let m = Array1::from_elem(4, true);
    let mean = Array1::from_elem(4, t.mean().unwrap());
    assert!(r2(mean.view(), t.view(), m.view()).unwrap().abs() < 1e-15);
    let reversed = Array1::from(vec![1.4, 0.9, 0.5, 0.2]);
    let d = r2(reversed.view(), t.view(), m.view()).unwrap();
    assert!(d < 0.0);
    let ss_res: f64 = [1.2f64, 0.4, -0.4, -1.2].iter().map(|v| v * v).sum();
    let ss_tot: f64 = [-0.55f64, -0.25, 0.15, 0.65].iter().map(|v| v * v).sum();
    assert!((d - (1.0 - ss_res / ss_tot)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn r2_follows_its_formula(
        truth in proptest::collection::vec(-5.0f64..5.0, 3..40),
        noise in proptest::collection::vec(-1.0f64..1.0, 40),
    ) {
        let n = truth.len();
        let t = Array1::from(truth.clone());
        let p = Array1::from_iter((0..n).map(|i| truth[i] + noise[i]));
        let m = Array1::from_elem(n, true);
        let mean = t.mean().unwrap();
        let ss_tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
        prop_assume!(ss_tot > 1e-6);
        let ss_res: f64 = p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum();
        let d = r2(p.view(), t.view(), m.view()).unwrap();
        prop_assert!((d - (1.0 - ss_res / ss_tot)).abs() < 1e-9);
        let e = rmse(p.view(), t.view(), m.view()).unwrap();
        prop_assert!((e - (ss_res / n as f64).sqrt()).abs() < 1e-12);
    }
}

fn small_protocol() -> Protocol {
    Protocol {
        n_test_days: 3,
        seed: 2,
        train: TrainConfig {
            epochs: 3,
            ..Default::default()
        },
        arch: Some(ArchConfig {
            input_pixels: 256,
            attr_dims: vec![32, 16],
            enc_dims: vec![32, 16],
            latent_dim: 4,
        }),
        ..Default::default()
    }
}

fn small_series() -> gapfill::SceneSeries {
    synth_series(&SynthConfig {
        height: 16,
        width: 16,
        days: 80,
        plume: GridRect::new(5, 1, 11, 7),
        seed: 6,
        ..Default::default()
    })
    .unwrap()
}

fn check_shape(report: &MetricsReport, regions: &[RegionSpec], n_days: usize) {
    let methods = [Method::Dineof, Method::VConstruct, Method::Climatology];
    assert_eq!(report.rows.len(), n_days * regions.len() * methods.len());
    assert_eq!(report.means.len(), regions.len() * methods.len());
    for r in regions {
        for m in methods {
            let rows: Vec<_> = report.rows_for(&r.name, m).collect();
            assert_eq!(rows.len(), n_days);
            let mean = report.mean(&r.name, m).unwrap();
            let finite: Vec<f64> = rows
                .iter()
                .map(|x| x.rmse)
                .filter(|v| v.is_finite())
                .collect();
            let avg = finite.iter().sum::<f64>() / finite.len() as f64;
            assert!((mean.rmse - avg).abs() <= 1e-12);
            let finite: Vec<f64> = rows
                .iter()
                .map(|x| x.r2)
                .filter(|v| v.is_finite())
                .collect();
            let avg = finite.iter().sum::<f64>() / finite.len() as f64;
            assert!((mean.r2 - avg).abs() <= 1e-12);
        }
    }
}

#[test]
fn small_experiment_report() {
    let series = small_series();
    let regions = vec![
        RegionSpec::full(16, 16),
        RegionSpec::new("plume", GridRect::new(5, 1, 11, 7)),
    ];
    let protocol = small_protocol();
    let a = run_experiment(&series, &regions, &protocol).unwrap();
    check_shape(&a, &regions, 3);
    assert!(a.test_days.iter().all(|d| !a.training_days.contains(d)));
    let b = run_experiment(&series, &regions, &protocol).unwrap();
    assert_eq!(a.metrics_csv(), b.metrics_csv());

    let csv = a.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("day,region,method,rmse,r2,seconds"));
    assert_eq!(lines.count(), a.rows.len() + a.means.len());
    let table = a.to_table();
    assert!(table.contains("region plume") && table.contains("mean"));

    let log = run_experiment(
        &series,
        &regions,
        &Protocol {
            metrics_space: MetricsSpace::Log10,
            ..protocol.clone()
        },
    )
    .unwrap();
    assert_eq!(log.test_days, a.test_days);
    assert_ne!(log.metrics_csv(), a.metrics_csv());
}

#[test]
fn experiment_rejects_bad_inputs() {
    let series = small_series();
    let bad = [RegionSpec::new("x", GridRect::new(0, 0, 17, 3))];
    assert!(run_experiment(&series, &bad, &small_protocol()).is_err());
    let too_many = Protocol {
        n_test_days: 1000,
        ..small_protocol()
    };
    assert!(run_experiment(&series, &[RegionSpec::full(16, 16)], &too_many).is_err());
}
