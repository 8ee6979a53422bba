use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GridError, Result, SceneSeries};

/// Days with at most this share of water pixels missing count as "very low cloud".
pub const DEFAULT_MAX_MISSING_FRAC: f64 = 0.02;

/// Positions (0-based frame indices) of days whose natural missing fraction is
/// at most `max_missing_frac`.
pub fn qualifying_days(series: &SceneSeries, max_missing_frac: f64) -> Vec<usize> {
    series
        .scenes()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.missing_fraction() <= max_missing_frac)
        .map(|(t, _)| t)
        .collect()
}

/// Draws `n` distinct near-complete days uniformly without replacement.
/// The result is sorted ascending.
pub fn select_test_days(
    series: &SceneSeries,
    max_missing_frac: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let pool = qualifying_days(series, max_missing_frac);
    if pool.len() < n {
        return Err(GridError::NotEnoughDays {
            needed: n,
            available: pool.len(),
            max_missing_frac,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut days: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    days.sort_unstable();
    Ok(days)
}
