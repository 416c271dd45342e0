use crate::error::{Error, Result};

/// Unweighted mean of per-class F1 over classes that occur in either
/// `predictions` or `truths`.
pub fn macro_f1(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Input("macro-F1 of an empty set".into()));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    let k = predictions.iter().chain(truths).max().unwrap() + 1;
    let (mut tp, mut fp, mut fn_) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&p, &t) in predictions.iter().zip(truths) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..k {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue;
        }
        present += 1;
        sum += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64;
    }
    Ok(sum / present as f64)
}
