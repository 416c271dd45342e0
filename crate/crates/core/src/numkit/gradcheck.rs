use crate::error::{Error, Result};

/// Compare an analytic gradient against central finite differences.
///
/// `loss_fn` returns the loss and its analytic gradient at a parameter
/// vector. The result is the maximum over coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Numeric(format!("finite-difference step must be positive, got {epsilon}")));
    }
    let (loss, analytic) = loss_fn(params);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss} at the base point")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + epsilon;
        let plus = loss_fn(&probe).0;
        probe[i] = params[i] - epsilon;
        let minus = loss_fn(&probe).0;
        probe[i] = params[i];
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::Numeric(format!("loss is not finite when perturbing coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
