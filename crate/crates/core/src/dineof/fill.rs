//! The fill procedure.
//!
//! 1. Subtract the mean of the observed entries.
//! 2. Hold out a random share of observed entries for cross-validation and
//!    start every unknown (missing or held out) entry at zero.
//! 3. For k = 1..=max_modes, alternate a rank-k SVD with replacing the unknown
//!    entries by the rank-k reconstruction until the relative change of those
//!    entries drops below `conv_tol`; record the held-out RMSE. Each k starts
//!    from the state left by k−1.
//! 4. Pick k* with the lowest held-out RMSE (near-ties go to fewer modes).
//! 5. Restore the held-out entries and iterate again at k* from the k* state.
//! 6. Add the mean back. Observed entries are copied through untouched.
//!
//! Rows or columns with no observation at all are excluded from the iteration,
//! filled with the mean and listed in the report.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{from_data_matrix, to_data_matrix, DataMatrix};
use super::svd::{SubspaceSolver, SvdOptions};
use super::{DineofError, EofModel, Result};
use crate::grid::{GridError, SceneSeries, ValueSpace};

#[derive(Clone, Debug, PartialEq)]
pub struct DineofConfig {
    /// Upper bound on k; `None` means `min(⌈√min(S,T)⌉, 30)`.
    pub max_modes: Option<usize>,
    /// Share of observed entries held out for cross-validation, in (0, 0.2).
    pub cv_fraction: f64,
    /// Relative change of the unknown entries that ends an inner loop.
    pub conv_tol: f64,
    pub max_iters_per_k: usize,
    pub seed: u64,
    pub remove_mean: bool,
    /// Held-out RMSEs within `cv_tie_tol × rms(data)` of the minimum count as ties.
    pub cv_tie_tol: f64,
    pub svd: SvdOptions,
}

impl Default for DineofConfig {
    fn default() -> Self {
        Self {
            max_modes: None,
            cv_fraction: 0.03,
            conv_tol: 1e-5,
            max_iters_per_k: 50,
            seed: 0,
            remove_mean: true,
            cv_tie_tol: 1e-6,
            svd: SvdOptions {
                tol: 1e-6,
                max_iter: 500,
                oversample: 10,
            },
        }
    }
}

impl DineofConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DineofError::InvalidConfig(m));
        if !(self.cv_fraction > 0.0 && self.cv_fraction < 0.2) {
            return bad(format!("cv_fraction {} outside (0, 0.2)", self.cv_fraction));
        }
        if !(self.conv_tol > 0.0) {
            return bad(format!("conv_tol {} must be > 0", self.conv_tol));
        }
        if self.max_iters_per_k == 0 {
            return bad("max_iters_per_k must be >= 1".into());
        }
        if self.max_modes == Some(0) {
            return bad("max_modes must be >= 1".into());
        }
        if !(self.cv_tie_tol >= 0.0) {
            return bad(format!("cv_tie_tol {}", self.cv_tie_tol));
        }
        if self.svd.max_iter == 0 || !(self.svd.tol > 0.0) {
            return bad(format!("svd options {:?}", self.svd));
        }
        Ok(())
    }

    pub fn effective_max_modes(&self, rows: usize, cols: usize) -> usize {
        let r = rows.min(cols);
        let default = ((r as f64).sqrt().ceil() as usize).min(30);
        self.max_modes.unwrap_or(default).min(r).max(1)
    }
}

/// Outcome of the sweep at one k.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeTrial {
    pub k: usize,
    pub cv_rmse: f64,
    pub iterations: usize,
    pub seconds: f64,
    /// RMSE of the rank-k reconstruction against the fitted (observed, not
    /// held-out) entries after each inner iteration.
    pub fit_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FillReport {
    pub trials: Vec<ModeTrial>,
    pub k_star: usize,
    pub refine_iterations: usize,
    pub refine_trace: Vec<f64>,
    pub cv_entries: usize,
    pub mean: f64,
    pub empty_rows: Vec<usize>,
    pub empty_cols: Vec<usize>,
    /// SVD calls that hit `svd.max_iter` before meeting `svd.tol`.
    pub svd_unconverged: usize,
    /// Subspace sweeps summed over all SVD calls.
    pub svd_sweeps: usize,
    pub seconds: f64,
}

impl FillReport {
    /// Tab-separated `k, cv_rmse, iterations, seconds` rows plus `#` summary lines.
    pub fn to_table(&self) -> String {
        let mut out = String::from("k\tcv_rmse\titerations\tseconds\n");
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{}\t{:.9e}\t{}\t{:.6}",
                t.k, t.cv_rmse, t.iterations, t.seconds
            );
        }
        let _ = writeln!(
            out,
            "# k_star={} refine_iterations={} cv_entries={} mean={:.12e} total_seconds={:.6}",
            self.k_star, self.refine_iterations, self.cv_entries, self.mean, self.seconds
        );
        let _ = writeln!(
            out,
            "# empty_rows={} empty_cols={} svd_unconverged={} svd_sweeps={}",
            self.empty_rows.len(),
            self.empty_cols.len(),
            self.svd_unconverged,
            self.svd_sweeps
        );
        out
    }
}

struct InnerLoop<'a> {
    x: &'a Array2<f64>,
    fit: &'a [(usize, usize)],
    conv_tol: f64,
    max_iters: usize,
}

struct InnerStats {
    iterations: usize,
    trace: Vec<f64>,
    unconverged: usize,
    sweeps: usize,
}

impl InnerLoop<'_> {
    fn run(
        &self,
        z: &mut Array2<f64>,
        unknown: &[(usize, usize)],
        k: usize,
        solver: &mut SubspaceSolver,
    ) -> InnerStats {
        let mut stats = InnerStats {
            iterations: 0,
            trace: Vec::new(),
            unconverged: 0,
            sweeps: 0,
        };
        if unknown.is_empty() {
            return stats;
        }
        for _ in 0..self.max_iters {
            let svd = solver.solve(z.view(), k);
            stats.iterations += 1;
            stats.unconverged += usize::from(!svd.converged);
            stats.sweeps += svd.iterations;
            let low = (&svd.u * &svd.s).dot(&svd.v.t());
            if !self.fit.is_empty() {
                let sse: f64 = self
                    .fit
                    .iter()
                    .map(|&(i, j)| (low[[i, j]] - self.x[[i, j]]).powi(2))
                    .sum();
                stats.trace.push((sse / self.fit.len() as f64).sqrt());
            }
            let (mut d2, mut l2) = (0.0, 0.0);
            for &(i, j) in unknown {
                let l = low[[i, j]];
                d2 += (l - z[[i, j]]).powi(2);
                l2 += l * l;
                z[[i, j]] = l;
            }
            if d2.sqrt() <= self.conv_tol * l2.sqrt() {
                break;
            }
        }
        stats
    }
}

/// Fills the missing entries of `dm`. Returns the filled S×T matrix (observed
/// entries bit-identical to the input), the EOFs of the final fill at k*, and
/// the report.
pub fn dineof_fill(
    dm: &DataMatrix,
    cfg: &DineofConfig,
) -> Result<(Array2<f64>, EofModel, FillReport)> {
    let start = Instant::now();
    cfg.validate()?;
    let (s, t) = dm.matrix.dim();
    if s == 0 || t == 0 {
        return Err(DineofError::Empty);
    }
    let observed_at = |i: usize, j: usize| !dm.missing[[i, j]] && dm.matrix[[i, j]].is_finite();
    let row_has: Vec<bool> = (0..s).map(|i| (0..t).any(|j| observed_at(i, j))).collect();
    let col_has: Vec<bool> = (0..t).map(|j| (0..s).any(|i| observed_at(i, j))).collect();
    let rows: Vec<usize> = (0..s).filter(|&i| row_has[i]).collect();
    let cols: Vec<usize> = (0..t).filter(|&j| col_has[j]).collect();
    if rows.is_empty() {
        return Err(DineofError::NoObserved);
    }
    let empty_rows: Vec<usize> = (0..s).filter(|&i| !row_has[i]).collect();
    let empty_cols: Vec<usize> = (0..t).filter(|&j| !col_has[j]).collect();

    let (m, n) = (rows.len(), cols.len());
    let mut observed = Vec::new();
    let mut missing = Vec::new();
    let (mut sum, mut count) = (0.0, 0usize);
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            if observed_at(i, j) {
                observed.push((si, sj));
                sum += dm.matrix[[i, j]];
                count += 1;
            } else {
                missing.push((si, sj));
            }
        }
    }
    let mean = if cfg.remove_mean {
        sum / count as f64
    } else {
        0.0
    };
    let mut x = Array2::zeros((m, n));
    for &(si, sj) in &observed {
        x[[si, sj]] = dm.matrix[[rows[si], cols[sj]]] - mean;
    }
    let data_rms = {
        let ss: f64 = observed.iter().map(|&(i, j)| x[[i, j]].powi(2)).sum();
        let r = (ss / observed.len() as f64).sqrt();
        if r > 0.0 {
            r
        } else {
            1.0
        }
    };

    let n_obs = observed.len();
    let n_cv = if n_obs >= 2 {
        ((cfg.cv_fraction * n_obs as f64).round() as usize).clamp(1, n_obs - 1)
    } else {
        0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut is_cv = vec![false; n_obs];
    for idx in rand::seq::index::sample(&mut rng, n_obs, n_cv) {
        is_cv[idx] = true;
    }
    let cv: Vec<(usize, usize)> = observed
        .iter()
        .zip(&is_cv)
        .filter(|(_, &c)| c)
        .map(|(&e, _)| e)
        .collect();
    let fit: Vec<(usize, usize)> = observed
        .iter()
        .zip(&is_cv)
        .filter(|(_, &c)| !c)
        .map(|(&e, _)| e)
        .collect();
    let unknown: Vec<(usize, usize)> = missing.iter().chain(cv.iter()).copied().collect();

    let mut z = x.clone();
    for &(i, j) in &cv {
        z[[i, j]] = 0.0;
    }

    let kmax = cfg.effective_max_modes(m, n);
    let mut solver = SubspaceSolver::new(cfg.svd);
    let mut svd_unconverged = 0;
    let mut svd_sweeps = 0;
    let mut trials = Vec::with_capacity(kmax);
    let mut snapshots: Vec<Vec<f64>> = Vec::with_capacity(kmax);

    let sweep = InnerLoop {
        x: &x,
        fit: &fit,
        conv_tol: cfg.conv_tol,
        max_iters: cfg.max_iters_per_k,
    };
    let k_star = if n_cv > 0 {
        for k in 1..=kmax {
            let t0 = Instant::now();
            let st = sweep.run(&mut z, &unknown, k, &mut solver);
            svd_unconverged += st.unconverged;
            svd_sweeps += st.sweeps;
            let cv_sse: f64 = cv
                .iter()
                .map(|&(i, j)| (z[[i, j]] - x[[i, j]]).powi(2))
                .sum();
            trials.push(ModeTrial {
                k,
                cv_rmse: (cv_sse / n_cv as f64).sqrt(),
                iterations: st.iterations,
                seconds: t0.elapsed().as_secs_f64(),
                fit_trace: st.trace,
            });
            snapshots.push(unknown.iter().map(|&(i, j)| z[[i, j]]).collect());
        }
        let best = trials
            .iter()
            .map(|t| t.cv_rmse)
            .fold(f64::INFINITY, f64::min);
        let band = best + cfg.cv_tie_tol * data_rms;
        let k_star = trials.iter().find(|t| t.cv_rmse <= band).map_or(1, |t| t.k);
        for (&(i, j), &v) in unknown.iter().zip(&snapshots[k_star - 1]) {
            z[[i, j]] = v;
        }
        k_star
    } else {
        1
    };
    for &(i, j) in &cv {
        z[[i, j]] = x[[i, j]];
    }

    let refine = InnerLoop {
        x: &x,
        fit: &observed,
        conv_tol: cfg.conv_tol,
        max_iters: cfg.max_iters_per_k,
    };
    let st = refine.run(&mut z, &missing, k_star, &mut solver);
    svd_unconverged += st.unconverged;
    svd_sweeps += st.sweeps;
    let final_svd = solver.solve(z.view(), k_star);
    svd_unconverged += usize::from(!final_svd.converged);
    svd_sweeps += final_svd.iterations;

    let mut filled = Array2::from_elem((s, t), mean);
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            filled[[i, j]] = z[[si, sj]] + mean;
        }
    }
    for i in 0..s {
        for j in 0..t {
            if observed_at(i, j) {
                filled[[i, j]] = dm.matrix[[i, j]];
            }
        }
    }

    let mut spatial = Array2::zeros((s, k_star));
    for (si, &i) in rows.iter().enumerate() {
        spatial.row_mut(i).assign(&final_svd.u.row(si));
    }
    let mut temporal = Array2::zeros((t, k_star));
    for (sj, &j) in cols.iter().enumerate() {
        temporal.row_mut(j).assign(&final_svd.v.row(sj));
    }
    let eof = EofModel {
        spatial_modes: spatial,
        singular_values: Array1::from(final_svd.s.to_vec()),
        temporal_modes: temporal,
    };
    let report = FillReport {
        trials,
        k_star,
        refine_iterations: st.iterations,
        refine_trace: st.trace,
        cv_entries: n_cv,
        mean,
        empty_rows,
        empty_cols,
        svd_unconverged,
        svd_sweeps,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((filled, eof, report))
}

/// Runs the fill on a normalized series. Every water pixel of the result is
/// observed; pixels observed in the input keep their exact values.
pub fn dineof_reconstruct(
    series: &SceneSeries,
    cfg: &DineofConfig,
) -> Result<(SceneSeries, EofModel, FillReport)> {
    if !matches!(series.space(), ValueSpace::Normalized(_)) {
        return Err(GridError::WrongSpace {
            expected: "normalized",
            found: series.space().name(),
        }
        .into());
    }
    let dm = to_data_matrix(series)?;
    let (filled, eof, report) = dineof_fill(&dm, cfg)?;
    let out = DataMatrix {
        missing: Array2::from_elem(filled.dim(), false),
        matrix: filled,
        pixel_map: dm.pixel_map,
    };
    Ok((from_data_matrix(&out, series)?, eof, report))
}
