use super::similarity::unit_rows;
use crate::error::{Error, Result};
use crate::numkit::dot;

/// Indices of the `h` candidates least similar to `anchor`, most
/// dissimilar first; equal similarities go to the smaller index.
pub fn hard_negatives(anchor: &[f64], candidates: &[Vec<f64>], h: usize) -> Result<Vec<usize>> {
    if h > candidates.len() {
        return Err(Error::Input(format!(
            "{h} hard negatives requested from {} candidates",
            candidates.len()
        )));
    }
    if h == 0 {
        return Ok(Vec::new());
    }
    let a = &unit_rows(std::slice::from_ref(&anchor.to_vec()))?[0];
    let units = unit_rows(candidates)?;
    let sims: Vec<f64> = units.iter().map(|u| dot(a, u)).collect();
    Ok(lowest(&sims, h, |_| true))
}

/// The `h` lowest entries of `sims` among indices accepted by `keep`,
/// ordered by (similarity, index).
pub(crate) fn lowest(sims: &[f64], h: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).filter(|&i| keep(i)).collect();
    let by = |a: &usize, b: &usize| sims[*a].total_cmp(&sims[*b]).then(a.cmp(b));
    if h < idx.len() {
        idx.select_nth_unstable_by(h, by);
        idx.truncate(h);
    }
    idx.sort_by(by);
    idx
}

/// Indices of the other clips that share the anchor's recording.
pub fn sibling_indices(index: usize, sources: &[u64]) -> Vec<usize> {
    (0..sources.len())
        .filter(|&j| j != index && sources[j] == sources[index])
        .collect()
}

/// Positive counterparts of anchor `index`: the untransformed embeddings of
/// its same-recording siblings followed by its own transformed views.
pub fn positive_set(index: usize, sources: &[u64], z: &[Vec<f64>], views: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    if sources.len() != z.len() || views.len() != z.len() || index >= z.len() {
        return Err(Error::Input(format!(
            "positive set for anchor {index} with {} sources, {} embeddings, {} view sets",
            sources.len(),
            z.len(),
            views.len()
        )));
    }
    let mut out: Vec<Vec<f64>> = sibling_indices(index, sources).into_iter().map(|j| z[j].clone()).collect();
    out.extend(views[index].iter().cloned());
    Ok(out)
}
