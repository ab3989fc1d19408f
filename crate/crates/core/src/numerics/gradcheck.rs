//! Central-difference gradient verification.

use super::mlp::{MlpGrads, MlpParams};
use crate::error::{Error, Result};

/// Default step for central differences at 64-bit precision.
pub const FD_STEP: f64 = 1e-6;

/// `(f(h) - f(-h)) / 2h` where `f` evaluates the loss with the probed
/// coordinate shifted by its argument.
pub fn central_difference(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Check analytic parameter gradients of `loss_fn` against central differences.
///
/// `loss_fn` returns the loss and its gradient for a parameter set; sample
/// data is captured by the closure. Returns the maximum relative error over
/// every parameter.
pub fn grad_check<F>(params: &MlpParams, mut loss_fn: F) -> Result<f64>
where
    F: FnMut(&MlpParams) -> Result<(f64, MlpGrads)>,
{
    let (loss, grads) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    let analytic: Vec<f64> = grads.blocks().flatten().copied().collect();
    if analytic.len() != params.num_params() {
        return Err(Error::Shape("gradient size does not match parameter count".into()));
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut flat = 0;
    let block_sizes: Vec<usize> = params.blocks().map(|b| b.len()).collect();
    for (b, &size) in block_sizes.iter().enumerate() {
        for k in 0..size {
            let orig = params.blocks().nth(b).expect("block")[k];
            let mut eval = |delta: f64| -> Result<f64> {
                probe.blocks_mut().nth(b).expect("block")[k] = orig + delta;
                let (l, _) = loss_fn(&probe)?;
                if !l.is_finite() {
                    return Err(Error::Numeric("loss is not finite".into()));
                }
                Ok(l)
            };
            let plus = eval(FD_STEP)?;
            let minus = eval(-FD_STEP)?;
            probe.blocks_mut().nth(b).expect("block")[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[flat], numeric));
            flat += 1;
        }
    }
    Ok(worst)
}

/// Check the gradient of a scalar function of a plain vector.
pub fn grad_check_vec<F>(x: &[f64], mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (loss, grad) = f(x)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    if grad.len() != x.len() {
        return Err(Error::Shape("gradient length does not match input".into()));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        probe[k] = x[k] + FD_STEP;
        let plus = f(&probe)?.0;
        probe[k] = x[k] - FD_STEP;
        let minus = f(&probe)?.0;
        probe[k] = x[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        worst = worst.max(relative_error(grad[k], (plus - minus) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}
