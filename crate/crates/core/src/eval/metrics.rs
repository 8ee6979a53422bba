use ndarray::{ArrayView, Dimension, Zip};

use super::{EvalError, Result};

fn check_shapes<D: Dimension>(
    pred: &ArrayView<f64, D>,
    truth: &ArrayView<f64, D>,
    mask: &ArrayView<bool, D>,
) -> Result<()> {
    if pred.shape() != truth.shape() || pred.shape() != mask.shape() {
        return Err(EvalError::ShapeMismatch(format!(
            "pred {:?}, truth {:?}, mask {:?}",
            pred.shape(),
            truth.shape(),
            mask.shape()
        )));
    }
    Ok(())
}

/// Root mean squared error over the entries selected by `mask`.
pub fn rmse<D: Dimension>(
    pred: ArrayView<f64, D>,
    truth: ArrayView<f64, D>,
    mask: ArrayView<bool, D>,
) -> Result<f64> {
    check_shapes(&pred, &truth, &mask)?;
    let (mut sse, mut n) = (0.0, 0usize);
    Zip::from(&pred)
        .and(&truth)
        .and(&mask)
        .for_each(|&p, &t, &m| {
            if m {
                sse += (p - t) * (p - t);
                n += 1;
            }
        });
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok((sse / n as f64).sqrt())
}

/// Coefficient of determination `1 − SS_res / SS_tot` over the masked entries.
/// Negative when the prediction is worse than the truth mean.
pub fn r2<D: Dimension>(
    pred: ArrayView<f64, D>,
    truth: ArrayView<f64, D>,
    mask: ArrayView<bool, D>,
) -> Result<f64> {
    check_shapes(&pred, &truth, &mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    Zip::from(&truth).and(&mask).for_each(|&t, &m| {
        if m {
            sum += t;
            n += 1;
        }
    });
    if n < 2 {
        return Err(EvalError::TooFewPixels(n));
    }
    let mean = sum / n as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    Zip::from(&pred)
        .and(&truth)
        .and(&mask)
        .for_each(|&p, &t, &m| {
            if m {
                ss_res += (p - t) * (p - t);
                ss_tot += (t - mean) * (t - mean);
            }
        });
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok(1.0 - ss_res / ss_tot)
}
