use ndarray::ArrayView1;

use super::{f64_of, Real, Result, VConstructError};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `−½ Σ (1 + logvar − mu² − exp(logvar))`, the KL divergence from
/// `N(mu, diag(exp(logvar)))` to `N(0, I)`.
pub fn kl_term<F: Real>(mu: ArrayView1<F>, logvar: ArrayView1<F>) -> f64 {
    mu.iter()
        .zip(logvar.iter())
        .map(|(&m, &lv)| {
            let (m, lv) = (f64_of(m), f64_of(lv));
            // exp_m1 keeps the zero-mean, zero-logvar case exactly 0.
            0.5 * (m * m + lv.exp_m1() - lv)
        })
        .sum()
}

/// Mean squared error over entries with `valid` set; 0 when none are valid.
pub fn recon_term<F: Real>(
    reconstruction: ArrayView1<F>,
    target: ArrayView1<F>,
    valid: ArrayView1<bool>,
) -> f64 {
    let (mut sse, mut n) = (0.0, 0usize);
    for ((&r, &t), &ok) in reconstruction.iter().zip(target.iter()).zip(valid.iter()) {
        if ok {
            sse += (f64_of(r) - f64_of(t)).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sse / n as f64
    }
}

pub fn loss<F: Real>(
    reconstruction: ArrayView1<F>,
    target: ArrayView1<F>,
    valid: ArrayView1<bool>,
    mu: ArrayView1<F>,
    logvar: ArrayView1<F>,
    kl_weight: f64,
) -> Result<LossParts> {
    let check = |what, expected: usize, got: usize| {
        if expected == got {
            Ok(())
        } else {
            Err(VConstructError::DimMismatch {
                what,
                expected,
                got,
            })
        }
    };
    check("target", reconstruction.len(), target.len())?;
    check("valid mask", reconstruction.len(), valid.len())?;
    check("logvar", mu.len(), logvar.len())?;
    let recon = recon_term(reconstruction, target, valid);
    let kl = kl_term(mu, logvar);
    Ok(LossParts {
        total: recon + kl_weight * kl,
        recon,
        kl,
    })
}
