use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, norm};

/// Lower and upper clamp applied to pair affinities before the log.
pub const AFFINITY_CLAMP: f64 = 1e-7;

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("cosine of {}-d and {}-d vectors", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Input("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity and its gradients with respect to both inputs. The
/// gradient ignores the final clamp.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (na, nb) = (norm(a), norm(b));
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("cosine of {}-d and {}-d vectors", a.len(), b.len())));
    }
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Input("cosine similarity of a zero-norm vector".into()));
    }
    let c = dot(a, b) / (na * nb);
    let ga = a.iter().zip(b).map(|(x, y)| y / (na * nb) - c * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x / (na * nb) - c * y / (nb * nb)).collect();
    Ok((c.clamp(-1.0, 1.0), ga, gb))
}

/// Affinity in (0, 1): `(1 + cos)/2`, clamped away from 0 and 1.
pub fn pair_affinity(zi: &[f64], zj: &[f64]) -> Result<f64> {
    Ok(((1.0 + cosine_sim(zi, zj)?) / 2.0).clamp(AFFINITY_CLAMP, 1.0 - AFFINITY_CLAMP))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairOrigin {
    Threshold,
    SameSource,
}

/// Binary same-class guess for an unordered pair `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairPseudoLabel {
    pub i: usize,
    pub j: usize,
    pub t: bool,
    pub origin: PairOrigin,
}

/// Label every unordered pair: positive when both come from the same
/// recording, or when their cosine similarity reaches `delta`.
pub fn build_pseudo_labels(embeddings: &[Vec<f64>], sources: &[u64], delta: f64) -> Result<Vec<PairPseudoLabel>> {
    if embeddings.len() < 2 {
        return Err(Error::Input(format!(
            "pseudo-labels need at least 2 embeddings, got {}",
            embeddings.len()
        )));
    }
    if sources.len() != embeddings.len() {
        return Err(Error::Input(format!(
            "{} sources for {} embeddings",
            sources.len(),
            embeddings.len()
        )));
    }
    if !(delta > -1.0 && delta < 1.0) {
        return Err(Error::Config(format!("similarity threshold {delta} outside (-1, 1)")));
    }
    let units = unit_rows(embeddings)?;
    let n = embeddings.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (t, origin) = if sources[i] == sources[j] {
                (true, PairOrigin::SameSource)
            } else {
                (dot(&units[i], &units[j]).clamp(-1.0, 1.0) >= delta, PairOrigin::Threshold)
            };
            out.push(PairPseudoLabel { i, j, t, origin });
        }
    }
    Ok(out)
}

/// Rows scaled to unit length; errors name the first zero-norm row.
pub(crate) fn unit_rows(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let n = norm(r);
            if !(n > 0.0) {
                return Err(Error::Input(format!("embedding {i} has zero norm")));
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}
