use super::{flatten_params, unflatten_params, ParamSet};
use crate::{Error, Result};

pub const DEFAULT_PERTURBATION: f64 = 1e-5;

/// Compares an analytic gradient against central differences.
///
/// `f` returns the loss and its analytic gradient at a point. The result is
/// the maximum over coordinates of `|g_fd − g_an| / max(1, |g_fd|, |g_an|)`.
pub fn grad_check<F>(point: &[f64], perturbation: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (loss, analytic) = f(point);
    if !loss.is_finite() {
        return Err(Error::NonFinite("grad_check base loss".into()));
    }
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + perturbation;
        let (plus, _) = f(&x);
        x[i] = orig - perturbation;
        let (minus, _) = f(&x);
        x[i] = orig;
        let fd = (plus - minus) / (2.0 * perturbation);
        let an = analytic[i];
        if !fd.is_finite() || !an.is_finite() {
            return Err(Error::NonFinite(format!("grad_check coordinate {i}")));
        }
        let err = (fd - an).abs() / 1f64.max(fd.abs()).max(an.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// [`grad_check`] over every entry of a parameter set. `f` returns the loss
/// and the gradient in the same parameter structure.
pub fn grad_check_params<P, F>(params: &P, perturbation: f64, mut f: F) -> Result<f64>
where
    P: ParamSet<f64> + Clone,
    F: FnMut(&P) -> (f64, P),
{
    let point = flatten_params(params);
    let mut scratch = params.clone();
    grad_check(&point, perturbation, |x| {
        unflatten_params(&mut scratch, x).expect("flattened length is fixed");
        let (loss, grad) = f(&scratch);
        (loss, flatten_params(&grad))
    })
}
