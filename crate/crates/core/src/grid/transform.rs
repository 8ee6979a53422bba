//! log10 and global z-score transforms over observed pixels.

use super::{GridError, NormStats, Result, SceneSeries, ValueSpace};

fn require(series: &SceneSeries, expected: ValueSpace) -> Result<()> {
    let ok = matches!(
        (series.space(), expected),
        (ValueSpace::Concentration, ValueSpace::Concentration)
            | (ValueSpace::Log10, ValueSpace::Log10)
            | (ValueSpace::Normalized(_), ValueSpace::Normalized(_))
    );
    if ok {
        Ok(())
    } else {
        Err(GridError::WrongSpace {
            expected: expected.name(),
            found: series.space().name(),
        })
    }
}

pub fn log_transform(series: &SceneSeries) -> Result<SceneSeries> {
    require(series, ValueSpace::Concentration)?;
    for (t, scene) in series.scenes().iter().enumerate() {
        for ((r, c), &v) in scene.values().indexed_iter() {
            if scene.status()[[r, c]].is_observed() && v <= 0.0 {
                return Err(GridError::NonPositive {
                    day: t,
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
    }
    Ok(series.map_scenes(ValueSpace::Log10, |s| s.map_observed(f64::log10)))
}

pub fn inverse_log_transform(series: &SceneSeries) -> Result<SceneSeries> {
    require(series, ValueSpace::Log10)?;
    Ok(series.map_scenes(ValueSpace::Concentration, |s| {
        s.map_observed(|v| 10f64.powf(v))
    }))
}

/// Z-scores a log-space series with mean and population standard deviation
/// taken over every observed pixel of every day.
pub fn normalize(series: &SceneSeries) -> Result<(SceneSeries, NormStats)> {
    require(series, ValueSpace::Log10)?;
    let observed = || {
        series.scenes().iter().flat_map(|s| {
            s.values()
                .iter()
                .zip(s.status().iter())
                .filter(|(_, st)| st.is_observed())
                .map(|(&v, _)| v)
        })
    };
    let n = observed().count();
    if n < 2 {
        return Err(GridError::TooFewObserved(n));
    }
    let mean = observed().sum::<f64>() / n as f64;
    let var = observed().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(GridError::ZeroVariance);
    }
    let stats = NormStats::new(mean, std)?;
    let out = series.map_scenes(ValueSpace::Normalized(stats), |s| {
        s.map_observed(|v| stats.forward(v))
    });
    Ok((out, stats))
}

pub fn denormalize(series: &SceneSeries, stats: &NormStats) -> Result<SceneSeries> {
    require(series, ValueSpace::Normalized(*stats))?;
    Ok(series.map_scenes(ValueSpace::Log10, |s| s.map_observed(|v| stats.inverse(v))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{PixelStatus, Scene};
    use ndarray::Array2;
    use proptest::prelude::*;

    fn series_from(values: Vec<f64>, status: Vec<PixelStatus>, w: usize) -> SceneSeries {
        let h = values.len() / w;
        let land = Array2::from_shape_fn((h, w), |(r, c)| status[r * w + c] == PixelStatus::Land);
        let scene = Scene::new(
            Array2::from_shape_vec((h, w), values).unwrap(),
            Array2::from_shape_vec((h, w), status).unwrap(),
        )
        .unwrap();
        SceneSeries::contiguous(vec![scene], land, ValueSpace::Concentration).unwrap()
    }

    #[test]
    fn log_of_known_values() {
        let s = series_from(
            vec![1.0, 100.0, 5.0, 1.0],
            vec![
                PixelStatus::Observed,
                PixelStatus::Observed,
                PixelStatus::Cloud,
                PixelStatus::Land,
            ],
            2,
        );
        let l = log_transform(&s).unwrap();
        let v = l.scene(0).values();
        assert_eq!(v[[0, 0]], 0.0);
        assert_eq!(v[[0, 1]], 2.0);
        assert!(v[[1, 0]].is_nan());
        assert_eq!(l.scene(0).status()[[1, 1]], PixelStatus::Land);
    }

    #[test]
    fn wrong_space_is_rejected() {
        let s = series_from(vec![1.0, 2.0], vec![PixelStatus::Observed; 2], 2);
        assert!(matches!(normalize(&s), Err(GridError::WrongSpace { .. })));
        assert!(inverse_log_transform(&s).is_err());
    }

    #[test]
    fn constant_field_has_zero_variance() {
        let s = series_from(vec![3.0; 4], vec![PixelStatus::Observed; 4], 2);
        let l = log_transform(&s).unwrap();
        assert!(matches!(normalize(&l), Err(GridError::ZeroVariance)));
    }

    #[test]
    fn single_observed_pixel_is_too_few() {
        let s = series_from(
            vec![3.0, 1.0],
            vec![PixelStatus::Observed, PixelStatus::Cloud],
            2,
        );
        let l = log_transform(&s).unwrap();
        assert!(matches!(normalize(&l), Err(GridError::TooFewObserved(1))));
    }

    fn arb_series() -> impl Strategy<Value = SceneSeries> {
        (1usize..5, 1usize..6, 1usize..6).prop_flat_map(|(t, h, w)| {
            let n = t * h * w;
            (
                proptest::collection::vec(1e-3f64..1e3, n),
                proptest::collection::vec(0u8..3, h * w),
                proptest::collection::vec(proptest::bool::weighted(0.3), n),
            )
                .prop_map(move |(vals, land_bytes, cloud)| {
                    let land = Array2::from_shape_fn((h, w), |(r, c)| land_bytes[r * w + c] == 0);
                    let scenes = (0..t)
                        .map(|d| {
                            let status = Array2::from_shape_fn((h, w), |(r, c)| {
                                if land[[r, c]] {
                                    PixelStatus::Land
                                } else if cloud[d * h * w + r * w + c] {
                                    PixelStatus::Cloud
                                } else {
                                    PixelStatus::Observed
                                }
                            });
                            let values =
                                Array2::from_shape_fn((h, w), |(r, c)| vals[d * h * w + r * w + c]);
                            Scene::new(values, status).unwrap()
                        })
                        .collect();
                    SceneSeries::contiguous(scenes, land, ValueSpace::Concentration).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn log_round_trip(series in arb_series()) {
            let back = inverse_log_transform(&log_transform(&series).unwrap()).unwrap();
            for (a, b) in series.scenes().iter().zip(back.scenes()) {
                prop_assert_eq!(a.status(), b.status());
                for (x, y) in a.values().iter().zip(b.values().iter()) {
                    if x.is_nan() {
                        prop_assert!(y.is_nan());
                    } else {
                        prop_assert!((x - y).abs() <= 1e-10 * x.abs());
                    }
                }
            }
        }

        #[test]
        fn normalize_round_trip(series in arb_series()) {
            let logged = log_transform(&series).unwrap();
            let Ok((norm, stats)) = normalize(&logged) else { return Ok(()); };

            let obs: Vec<f64> = norm.scenes().iter().flat_map(|s| {
                s.values().iter().zip(s.status().iter())
                    .filter(|(_, st)| st.is_observed()).map(|(&v, _)| v).collect::<Vec<_>>()
            }).collect();
            let n = obs.len() as f64;
            let mean = obs.iter().sum::<f64>() / n;
            let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);

            let back_log = denormalize(&norm, &stats).unwrap();
            let back = inverse_log_transform(&back_log).unwrap();
            for (a, b) in logged.scenes().iter().zip(back_log.scenes()) {
                for (x, y) in a.values().iter().zip(b.values().iter()) {
                    if !x.is_nan() {
                        prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
                    }
                }
            }
            for (a, b) in series.scenes().iter().zip(back.scenes()) {
                prop_assert_eq!(a.status(), b.status());
                for (x, y) in a.values().iter().zip(b.values().iter()) {
                    if x.is_nan() {
                        prop_assert!(y.is_nan());
                    } else {
                        prop_assert!((x - y).abs() <= 1e-10 * x.abs());
                    }
                }
            }
        }
    }
}
