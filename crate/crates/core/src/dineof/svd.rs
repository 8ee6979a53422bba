//! Top-k singular value decomposition by block power (subspace) iteration.
//!
//! Each sweep extracts Ritz pairs from the small projected matrix `Qᵀ A` with
//! a one-sided Jacobi SVD, then takes the orthonormalized `A V` as the next
//! basis. Iteration stops once every retained pair satisfies
//! `‖A vᵢ − σᵢ uᵢ‖ ≤ tol · σ₁` (the other residual `Aᵀ uᵢ − σᵢ vᵢ` is zero by
//! construction of the Ritz pairs).

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DineofError, EofModel, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvdOptions {
    /// Relative residual threshold.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra basis vectors beyond `k`.
    pub oversample: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 5000,
            oversample: 5,
        }
    }
}

/// Thin SVD `A = U diag(s) Vᵀ` with singular values sorted non-increasing.
#[derive(Clone, Debug)]
pub(crate) struct ThinSvd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

/// One-sided (Hestenes) Jacobi SVD of a tall matrix (`m >= n`).
fn jacobi_tall(a: ArrayView2<f64>) -> ThinSvd {
    let (m, n) = a.dim();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - sn * yq;
                    *y = sn * xp + c * yq;
                }
                let (lo, hi) = vcols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - sn * yq;
                    *y = sn * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let smax = norms.iter().copied().fold(0.0, f64::max);
    let mut u = Array2::zeros((m, n));
    let mut v = Array2::zeros((n, n));
    let mut s = Array1::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        for i in 0..n {
            v[[i, dst]] = vcols[src][i];
        }
        if norms[src] > smax * 1e-300 && norms[src] > 0.0 {
            for i in 0..m {
                u[[i, dst]] = cols[src][i] / norms[src];
            }
        }
    }
    // Columns of U for zero singular values are completed to an orthonormal set.
    let zero_from = (0..n).find(|&j| s[j] == 0.0 || u.column(j).iter().all(|&x| x == 0.0));
    if let Some(j0) = zero_from {
        orthonormalize_from(&mut u, j0, 0x5eed_0001);
    }
    ThinSvd { u, s, v }
}

/// Thin SVD of any matrix; `U` is m×r, `V` is n×r with r = min(m, n).
pub(crate) fn thin_svd(a: ArrayView2<f64>) -> ThinSvd {
    let (m, n) = a.dim();
    if m >= n {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(a.t());
        ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    }
}

/// Modified Gram–Schmidt (two passes) on columns `from..`, keeping columns
/// `..from` fixed. Degenerate columns are replaced by seeded random vectors.
pub(crate) fn orthonormalize_from(q: &mut Array2<f64>, from: usize, seed: u64) {
    let (m, p) = q.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in from..p {
        for attempt in 0..4 {
            let before = q.column(j).dot(&q.column(j)).sqrt();
            for _pass in 0..2 {
                for i in 0..j {
                    let proj = q.column(i).dot(&q.column(j));
                    let ci = q.column(i).to_owned();
                    q.column_mut(j).scaled_add(-proj, &ci);
                }
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm > 1e-10 * before.max(f64::MIN_POSITIVE) && norm > 1e-300 {
                q.column_mut(j).mapv_inplace(|x| x / norm);
                break;
            }
            assert!(attempt < 3 || m <= j, "cannot complete orthonormal basis");
            for x in q.column_mut(j).iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
        }
    }
}

/// Result of a warm-startable truncated SVD.
#[derive(Clone, Debug)]
pub(crate) struct Partial {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Subspace iteration that keeps its basis between calls, so repeated solves
/// on slowly changing matrices start near the answer.
#[derive(Clone, Debug, Default)]
pub(crate) struct SubspaceSolver {
    opts: SvdOptions,
    /// m×p basis, columns ordered by descending Ritz value.
    basis: Option<Array2<f64>>,
}

impl SubspaceSolver {
    pub fn new(opts: SvdOptions) -> Self {
        Self { opts, basis: None }
    }

    fn initial_basis(&mut self, m: usize, p: usize) -> Array2<f64> {
        let mut q = Array2::zeros((m, p));
        let keep = match &self.basis {
            Some(b) if b.nrows() == m => {
                let c = b.ncols().min(p);
                q.slice_mut(s![.., ..c]).assign(&b.slice(s![.., ..c]));
                c
            }
            _ => 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ p as u64);
        for j in keep..p {
            for i in 0..m {
                q[[i, j]] = StandardNormal.sample(&mut rng);
            }
        }
        orthonormalize_from(&mut q, 0, 0x5eed_0002);
        q
    }

    pub fn solve(&mut self, a: ArrayView2<f64>, k: usize) -> Partial {
        let (m, n) = a.dim();
        let r = m.min(n);
        debug_assert!(k >= 1 && k <= r);
        let p = (k + self.opts.oversample).min(r);
        if p == r {
            let full = thin_svd(a);
            self.basis = Some(full.u.clone());
            return Partial {
                u: full.u.slice(s![.., ..k]).to_owned(),
                s: full.s.slice(s![..k]).to_owned(),
                v: full.v.slice(s![.., ..k]).to_owned(),
                iterations: 1,
                converged: true,
            };
        }

        let mut q = self.initial_basis(m, p);
        let mut b = q.t().dot(&a);
        let mut out = None;
        for it in 1..=self.opts.max_iter {
            // Ritz pairs of the current basis: A ≈ (Q Ub) diag(s) Vbᵀ.
            let small = thin_svd(b.view());
            let av = a.dot(&small.v);
            let u_all = q.dot(&small.u);
            let worst = (0..k)
                .map(|j| {
                    let sig = small.s[j];
                    av.column(j)
                        .iter()
                        .zip(u_all.column(j).iter())
                        .map(|(x, y)| (x - sig * y).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max);
            let converged = worst <= self.opts.tol * small.s[0];
            if converged || it == self.opts.max_iter {
                out = Some(Partial {
                    u: u_all.slice(s![.., ..k]).to_owned(),
                    s: small.s.slice(s![..k]).to_owned(),
                    v: small.v.slice(s![.., ..k]).to_owned(),
                    iterations: it,
                    converged,
                });
                q = u_all;
                break;
            }
            // A·Vb spans the next basis; Vb is already orthonormal, so this is
            // one full power step.
            q = av;
            orthonormalize_from(&mut q, 0, 0x5eed_0004 ^ it as u64);
            b = q.t().dot(&a);
        }
        self.basis = Some(q);
        out.expect("max_iter >= 1")
    }
}

/// Top-`k` singular triplets of a fully observed matrix.
pub fn truncated_svd(matrix: &Array2<f64>, k: usize) -> Result<EofModel> {
    truncated_svd_with(matrix, k, SvdOptions::default())
}

pub fn truncated_svd_with(matrix: &Array2<f64>, k: usize, opts: SvdOptions) -> Result<EofModel> {
    let (m, n) = matrix.dim();
    if m == 0 || n == 0 {
        return Err(DineofError::Empty);
    }
    let r = m.min(n);
    if k == 0 || k > r {
        return Err(DineofError::RankOutOfRange { k, max: r });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(DineofError::NotFilled);
    }
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(DineofError::InvalidConfig(format!("{opts:?}")));
    }
    let mut solver = SubspaceSolver::new(opts);
    let res = solver.solve(matrix.view(), k);
    if !res.converged {
        return Err(DineofError::NotConverged {
            iterations: res.iterations,
        });
    }
    Ok(EofModel {
        spatial_modes: res.u,
        singular_values: res.s,
        temporal_modes: res.v,
    })
}
