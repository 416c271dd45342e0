//! Cluster evaluation: silhouette, adjusted Rand index, mutual information,
//! greedy-mapping clustering accuracy, and the openness measure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predicted labels for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Contingency counts: rows are true classes, columns predicted clusters,
/// both in ascending id order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub true_ids: Vec<usize>,
    pub pred_ids: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        check_lengths(pred, truth)?;
        let index = |v: &[usize]| -> BTreeMap<usize, usize> {
            let mut m: BTreeMap<usize, usize> = v.iter().map(|&x| (x, 0)).collect();
            for (i, slot) in m.values_mut().enumerate() {
                *slot = i;
            }
            m
        };
        let ti = index(truth);
        let pi = index(pred);
        let mut counts = vec![vec![0; pi.len()]; ti.len()];
        for (p, t) in pred.iter().zip(truth) {
            counts[ti[t]][pi[p]] += 1;
        }
        Ok(Self {
            true_ids: ti.into_keys().collect(),
            pred_ids: pi.into_keys().collect(),
            counts,
        })
    }

    fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        (0..self.pred_ids.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index. Identical trivial partitions (all one cluster, or
/// all singletons, on both sides) score 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::Input(format!("ARI needs at least 2 points, got {}", pred.len())));
    }
    let c = Contingency::new(pred, truth)?;
    let index: f64 = c.counts.iter().flatten().map(|&x| comb2(x)).sum();
    let a: f64 = c.row_sums().into_iter().map(comb2).sum();
    let b: f64 = c.col_sums().into_iter().map(comb2).sum();
    let expected = a * b / comb2(pred.len());
    let max = (a + b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Mutual information of the empirical joint distribution, in nats.
pub fn mutual_information(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Input("mutual information of empty labelings".into()));
    }
    let c = Contingency::new(pred, truth)?;
    let n = pred.len() as f64;
    let rows = c.row_sums();
    let cols = c.col_sums();
    let mut mi = 0.0;
    for (i, r) in c.counts.iter().enumerate() {
        for (j, &nij) in r.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Mutual information in an arbitrary logarithm base.
pub fn mutual_information_base(pred: &[usize], truth: &[usize], base: f64) -> Result<f64> {
    if !(base > 0.0 && base != 1.0) {
        return Err(Error::Config(format!("logarithm base {base} is invalid")));
    }
    Ok(mutual_information(pred, truth)? / base.ln())
}

/// Greedy true-class to cluster mapping and the accuracies it implies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringAccuracy {
    /// `(true class, matched cluster, overlap)` per true class.
    pub matches: Vec<(usize, usize, usize)>,
    pub mapping_valid: bool,
    /// Percentage per true class; absent when the mapping is invalid.
    pub per_class: Option<BTreeMap<usize, f64>>,
    /// Matched mass over all points; absent when the mapping is invalid.
    pub overall: Option<f64>,
    /// Matched mass over all points, computed even for invalid mappings.
    pub matched_mass: f64,
}

/// Each true class is matched to the cluster it overlaps most (smaller
/// cluster id on ties). A cluster claimed by two or more classes makes the
/// mapping invalid.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<ClusteringAccuracy> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Input("clustering accuracy of empty labelings".into()));
    }
    let c = Contingency::new(pred, truth)?;
    let rows = c.row_sums();
    let mut matches = Vec::with_capacity(c.true_ids.len());
    let mut claims = vec![0usize; c.pred_ids.len()];
    for (i, r) in c.counts.iter().enumerate() {
        let mut best = 0;
        for (j, &x) in r.iter().enumerate() {
            if x > r[best] {
                best = j;
            }
        }
        claims[best] += 1;
        matches.push((c.true_ids[i], c.pred_ids[best], r[best]));
    }
    let mapping_valid = claims.iter().all(|&k| k <= 1);
    let mass: usize = matches.iter().map(|m| m.2).sum();
    let matched_mass = 100.0 * mass as f64 / pred.len() as f64;
    let (per_class, overall) = if mapping_valid {
        let per = matches
            .iter()
            .zip(&rows)
            .map(|(m, &n)| (m.0, 100.0 * m.2 as f64 / n as f64))
            .collect();
        (Some(per), Some(matched_mass))
    } else {
        (None, None)
    };
    Ok(ClusteringAccuracy {
        matches,
        mapping_valid,
        per_class,
        overall,
        matched_mass,
    })
}

/// Mean silhouette coefficient under Euclidean distance. Points alone in
/// their cluster score 0.
pub fn silhouette(z: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if z.len() != labels.len() {
        return Err(Error::Input(format!("{} points with {} labels", z.len(), labels.len())));
    }
    let canon = crate::clustering::canonical_labels(labels);
    let k = canon.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Input(format!("silhouette needs at least 2 clusters, got {k}")));
    }
    let n = z.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = z[i].iter().zip(&z[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut sizes = vec![0usize; k];
    canon.iter().for_each(|&c| sizes[c] += 1);
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[canon[j]] += dist[i * n + j];
        }
        let own = canon[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// `1 - sqrt(2·n_train / (2·n_train + n_test))`.
pub fn openness(n_train_classes: usize, n_test_classes: usize) -> Result<f64> {
    if n_train_classes == 0 {
        return Err(Error::Input("openness needs at least one training class".into()));
    }
    let a = 2.0 * n_train_classes as f64;
    Ok(1.0 - (a / (a + n_test_classes as f64)).sqrt())
}

/// Flat evaluation record for one clustering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Silhouette score; absent when fewer than two clusters were formed.
    pub ss: Option<f64>,
    pub ari: f64,
    pub mi: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc_overall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc_per_class: Option<BTreeMap<String, f64>>,
    pub mapping_valid: bool,
    pub acc_matched_mass: f64,
    pub openness: Option<f64>,
    pub confusion: Contingency,
}

/// Evaluate `pred` against `truth` for points `z`. `classes` gives
/// `(n_train, n_test)` for the openness field.
pub fn evaluate(z: &[Vec<f64>], pred: &[usize], truth: &[usize], classes: Option<(usize, usize)>) -> Result<MetricsReport> {
    let acc = clustering_accuracy(pred, truth)?;
    let n_clusters = pred.iter().collect::<std::collections::BTreeSet<_>>().len();
    Ok(MetricsReport {
        ss: if n_clusters >= 2 { Some(silhouette(z, pred)?) } else { None },
        ari: ari(pred, truth)?,
        mi: mutual_information(pred, truth)?,
        acc_overall: acc.overall,
        acc_per_class: acc
            .per_class
            .map(|m| m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()),
        mapping_valid: acc.mapping_valid,
        acc_matched_mass: acc.matched_mass,
        openness: classes.map(|(a, b)| openness(a, b)).transpose()?,
        confusion: Contingency::new(pred, truth)?,
    })
}
