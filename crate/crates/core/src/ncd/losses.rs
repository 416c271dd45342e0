//! The three training objectives and their gradients with respect to the
//! encoder outputs they consume.

use super::similarity::{cosine_with_grad, PairPseudoLabel, AFFINITY_CLAMP};
use crate::error::{Error, Result};

/// Gradient buffers shaped like a list of vectors.
fn zeros_like(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter().map(|v| vec![0.0; v.len()]).collect()
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Mean binary cross-entropy of the pseudo-labels under `p = (1+cos)/2`.
pub fn bce_loss(pairs: &[PairPseudoLabel], z: &[Vec<f64>]) -> Result<f64> {
    bce_loss_grad(pairs, z).map(|(l, _)| l)
}

/// [`bce_loss`] and its gradient with respect to every row of `z`. Pairs
/// whose affinity sits on the clamp contribute no gradient.
pub fn bce_loss_grad(pairs: &[PairPseudoLabel], z: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if pairs.is_empty() {
        return Err(Error::Input("binary cross-entropy over zero pairs".into()));
    }
    let mut grads = zeros_like(z);
    let mut total = 0.0;
    let scale = 1.0 / pairs.len() as f64;
    for pair in pairs {
        let (zi, zj) = match (z.get(pair.i), z.get(pair.j)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Input(format!(
                    "pair ({}, {}) outside {} embeddings",
                    pair.i,
                    pair.j,
                    z.len()
                )))
            }
        };
        let (c, gi, gj) = cosine_with_grad(zi, zj)?;
        let raw = (1.0 + c) / 2.0;
        let p = raw.clamp(AFFINITY_CLAMP, 1.0 - AFFINITY_CLAMP);
        let (loss, dl_dp) = if pair.t {
            (-p.ln(), -1.0 / p)
        } else {
            (-(1.0 - p).ln(), 1.0 / (1.0 - p))
        };
        total += loss;
        if raw == p {
            let d = scale * dl_dp * 0.5;
            axpy(&mut grads[pair.i], d, &gi);
            axpy(&mut grads[pair.j], d, &gj);
        }
    }
    Ok((total * scale, grads))
}

/// Per-set mean squared difference between embeddings and their
/// transformed twins, summed over the labeled and unlabeled sets. An empty
/// set contributes zero.
pub fn consistency_loss(zl: &[Vec<f64>], zl_t: &[Vec<f64>], zu: &[Vec<f64>], zu_t: &[Vec<f64>]) -> Result<f64> {
    consistency_loss_grad(zl, zl_t, zu, zu_t).map(|(l, _)| l)
}

/// Gradients of [`consistency_loss`], one buffer per input set.
pub struct ConsistencyGrads {
    pub zl: Vec<Vec<f64>>,
    pub zl_t: Vec<Vec<f64>>,
    pub zu: Vec<Vec<f64>>,
    pub zu_t: Vec<Vec<f64>>,
}

pub fn consistency_loss_grad(
    zl: &[Vec<f64>],
    zl_t: &[Vec<f64>],
    zu: &[Vec<f64>],
    zu_t: &[Vec<f64>],
) -> Result<(f64, ConsistencyGrads)> {
    let (l, gl, gl_t) = mean_sq_diff(zl, zl_t, "labeled")?;
    let (u, gu, gu_t) = mean_sq_diff(zu, zu_t, "unlabeled")?;
    Ok((
        l + u,
        ConsistencyGrads {
            zl: gl,
            zl_t: gl_t,
            zu: gu,
            zu_t: gu_t,
        },
    ))
}

type SqDiff = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

fn mean_sq_diff(a: &[Vec<f64>], b: &[Vec<f64>], which: &str) -> Result<SqDiff> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "{which} set has {} embeddings but {} transformed twins",
            a.len(),
            b.len()
        )));
    }
    let mut ga = zeros_like(a);
    let mut gb = zeros_like(b);
    let count: usize = a.iter().map(Vec::len).sum();
    if count == 0 {
        return Ok((0.0, ga, gb));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{which} pair {k}: {}-d vs {}-d",
                x.len(),
                y.len()
            )));
        }
        for (d, (xv, yv)) in x.iter().zip(y).enumerate() {
            let diff = xv - yv;
            total += diff * diff;
            ga[k][d] = 2.0 * diff * scale;
            gb[k][d] = -2.0 * diff * scale;
        }
    }
    Ok((total * scale, ga, gb))
}

/// Contrastive loss of one anchor: for each positive `ẑ`,
/// `-log(e^{ε(z,ẑ)/τ} / (e^{ε(z,ẑ)/τ} + Σ_neg e^{ε(z,z̄)/τ}))`, averaged over
/// the positives. Zero when there are no negatives.
pub fn contrastive_loss(z: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>], tau: f64) -> Result<f64> {
    contrastive_loss_grad(z, positives, negatives, tau).map(|g| g.loss)
}

pub struct ContrastiveGrads {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn contrastive_loss_grad(
    z: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<ContrastiveGrads> {
    if positives.is_empty() {
        return Err(Error::Input("contrastive loss needs at least one positive".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let mut g_anchor = vec![0.0; z.len()];
    let mut g_pos = zeros_like(positives);
    let mut g_neg = zeros_like(negatives);
    if negatives.is_empty() {
        return Ok(ContrastiveGrads {
            loss: 0.0,
            anchor: g_anchor,
            positives: g_pos,
            negatives: g_neg,
        });
    }
    let neg: Vec<(f64, Vec<f64>, Vec<f64>)> = negatives
        .iter()
        .map(|n| cosine_with_grad(z, n))
        .collect::<Result<_>>()?;
    let scale = 1.0 / positives.len() as f64;
    let mut total = 0.0;
    let mut logits = vec![0.0; negatives.len()];
    for (k, p) in positives.iter().enumerate() {
        let (sp, ga, gp) = cosine_with_grad(z, p)?;
        for (l, (sn, _, _)) in logits.iter_mut().zip(&neg) {
            *l = (sn - sp) / tau;
        }
        // log(1 + Σ e^l), shifted for stability
        let m = logits.iter().copied().fold(0.0, f64::max);
        let denom = (-m).exp() + logits.iter().map(|l| (l - m).exp()).sum::<f64>();
        total += m + denom.ln();
        let mut w_sum = 0.0;
        for (n, l) in logits.iter().enumerate() {
            let w = (l - m).exp() / denom;
            w_sum += w;
            let d = scale * w / tau;
            axpy(&mut g_anchor, d, &neg[n].1);
            axpy(&mut g_neg[n], d, &neg[n].2);
        }
        let d = -scale * w_sum / tau;
        axpy(&mut g_anchor, d, &ga);
        axpy(&mut g_pos[k], d, &gp);
    }
    Ok(ContrastiveGrads {
        loss: total * scale,
        anchor: g_anchor,
        positives: g_pos,
        negatives: g_neg,
    })
}

/// `ℓ_bce + β·ℓ_cl + γ·ℓ_mse`.
pub fn total_loss(bce: f64, cl: f64, mse: f64, beta: f64, gamma: f64) -> Result<f64> {
    if !(beta >= 0.0 && gamma >= 0.0) {
        return Err(Error::Config(format!("loss weights must be non-negative, got β={beta}, γ={gamma}")));
    }
    Ok(bce + beta * cl + gamma * mse)
}
