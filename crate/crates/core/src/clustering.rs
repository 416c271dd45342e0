//! Cluster assignment: cosine-threshold connected components, k-means with
//! k-means++ seeding, and PCA projection followed by k-means.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ncd::cosine_sim;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMethod {
    CosineThreshold,
    Kmeans,
    ReduceKmeans,
}

impl ClusterMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ClusterMethod::CosineThreshold => "cosine-threshold",
            ClusterMethod::Kmeans => "kmeans",
            ClusterMethod::ReduceKmeans => "reduce-kmeans",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster id per input row, contiguous from 0.
    pub labels: Vec<usize>,
    pub method: ClusterMethod,
    pub params: BTreeMap<String, f64>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    fn new(labels: Vec<usize>, method: ClusterMethod, params: &[(&str, f64)]) -> Self {
        let num_clusters = labels.iter().max().map_or(0, |m| m + 1);
        Self {
            labels,
            method,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            num_clusters,
        }
    }

    pub fn to_csv(&self, clip_ids: &[u64]) -> String {
        let mut s = String::from("clip_id,cluster_id\n");
        for (id, c) in clip_ids.iter().zip(&self.labels) {
            s.push_str(&format!("{id},{c}\n"));
        }
        s
    }
}

/// Relabel so ids appear in order of first occurrence.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the graph joining rows with cosine similarity
/// strictly above `th`. Components are numbered by their smallest member.
pub fn cosine_threshold_clusters(z: &[Vec<f64>], th: f64) -> Result<ClusterAssignment> {
    if !(th > -1.0 && th < 1.0) {
        return Err(Error::Config(format!("cosine threshold {th} outside (-1, 1)")));
    }
    let n = z.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine_sim(&z[i], &z[j]).map_err(|e| e.context(format!("rows {i} and {j}")))?;
            if s > th {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Ok(ClusterAssignment::new(
        canonical_labels(&roots),
        ClusterMethod::CosineThreshold,
        &[("th", th)],
    ))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult {
    pub assignment: ClusterAssignment,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub history: Vec<f64>,
    pub best_restart: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansConfig {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            restarts: 8,
        }
    }
}

/// k-means with k-means++ seeding and Lloyd iterations, best of
/// `restarts` by inertia (earliest restart on ties).
pub fn kmeans(z: &[Vec<f64>], k: usize, seed: u64, config: &KmeansConfig) -> Result<KmeansResult> {
    let n = z.len();
    if k == 0 || k > n {
        return Err(Error::Input(format!("cannot form {k} clusters from {n} points")));
    }
    let d = z[0].len();
    if z.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("k-means rows differ in length".into()));
    }
    if config.restarts == 0 || config.max_iters == 0 {
        return Err(Error::Config("k-means restarts and max_iters must be positive".into()));
    }
    let mut best: Option<(f64, usize, Vec<usize>, Vec<Vec<f64>>, Vec<f64>)> = None;
    for r in 0..config.restarts {
        let mut rng = rng::rng(seed, &[0x6b6d, r as u64]);
        let (labels, centroids, history) = lloyd(z, plus_plus(z, k, &mut rng), config.max_iters);
        let inertia = *history.last().unwrap();
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, r, labels, centroids, history));
        }
    }
    let (inertia, best_restart, labels, centroids, history) = best.unwrap();
    // renumber clusters and centroids by first appearance
    let canon = canonical_labels(&labels);
    let mut ordered = vec![Vec::new(); k];
    for (old, new) in labels.iter().zip(&canon) {
        ordered[*new] = centroids[*old].clone();
    }
    Ok(KmeansResult {
        assignment: ClusterAssignment::new(
            canon,
            ClusterMethod::Kmeans,
            &[("k", k as f64), ("restarts", config.restarts as f64), ("seed", seed as f64)],
        ),
        centroids: ordered,
        inertia,
        history,
        best_restart,
    })
}

fn plus_plus(z: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = z.len();
    let mut centroids = vec![z[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = z.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(z[pick].clone());
        for (d, p) in d2.iter_mut().zip(z) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign(z: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    z.iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, mu) in centroids.iter().enumerate() {
                let d = sq_dist(p, mu);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Lloyd iterations from the given centroids. Returns labels, centroids and
/// the inertia after every assignment step.
fn lloyd(z: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let k = centroids.len();
    let d = z[0].len();
    let (mut labels, mut dist) = assign(z, &centroids);
    let mut history = vec![dist.iter().sum()];
    for _ in 0..max_iters {
        // re-seed empty clusters at the point farthest from its centroid
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..z.len())
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a shared cluster");
                counts[labels[far]] -= 1;
                counts[c] = 1;
                labels[far] = c;
                dist[far] = 0.0;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        for (p, &l) in z.iter().zip(&labels) {
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for (c, s) in sums.into_iter().enumerate() {
            let mean: Vec<f64> = s.iter().map(|v| v / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        let (new_labels, new_dist) = assign(z, &centroids);
        history.push(new_dist.iter().sum());
        let stable = new_labels == labels;
        labels = new_labels;
        dist = new_dist;
        if stable || shift < 1e-8 {
            break;
        }
    }
    (labels, centroids, history)
}

/// Principal axes of centered data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One unit-length axis per retained component.
    pub components: Vec<Vec<f64>>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub coords: Vec<Vec<f64>>,
}

impl Pca {
    /// Share of total variance carried by the retained components.
    pub fn explained_variance_ratio(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        let kept: f64 = self.eigenvalues[..self.components.len()].iter().sum();
        if total > 0.0 {
            kept / total
        } else {
            0.0
        }
    }
}

/// Project onto the top `dims` eigenvectors of the sample covariance. Each
/// axis is signed so its largest-magnitude loading is positive.
pub fn pca(z: &[Vec<f64>], dims: usize) -> Result<Pca> {
    let n = z.len();
    let d = z.first().map_or(0, Vec::len);
    if dims == 0 || dims > d {
        return Err(Error::Input(format!("cannot keep {dims} of {d} dimensions")));
    }
    if n <= dims {
        return Err(Error::Input(format!("PCA to {dims} dimensions needs more than {dims} points, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in z {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| z[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    if eigenvalues[dims - 1] <= 1e-12 * eigenvalues[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Input(format!(
            "covariance has rank below the {dims} requested dimensions"
        )));
    }
    let components: Vec<Vec<f64>> = order[..dims]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .unwrap()
                .1;
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let coords = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..d).map(|j| centered[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        coords,
    })
}

/// PCA to `target_dims` followed by k-means on the projections.
pub fn reduce_then_kmeans(
    z: &[Vec<f64>],
    target_dims: usize,
    k: usize,
    seed: u64,
    config: &KmeansConfig,
) -> Result<(KmeansResult, Pca)> {
    let p = pca(z, target_dims)?;
    let mut km = kmeans(&p.coords, k, seed, config)?;
    km.assignment.method = ClusterMethod::ReduceKmeans;
    km.assignment.params.insert("target_dims".into(), target_dims as f64);
    Ok((km, p))
}

pub fn coords_csv(clip_ids: &[u64], coords: &[Vec<f64>]) -> String {
    let mut s = String::from("clip_id,x,y\n");
    for (id, c) in clip_ids.iter().zip(coords) {
        let x = c.first().copied().unwrap_or(0.0);
        let y = c.get(1).copied().unwrap_or(0.0);
        s.push_str(&format!("{id},{x},{y}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn threshold_examples() {
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.1]];
        assert_eq!(cosine_threshold_clusters(&z, 0.99).unwrap().num_clusters, 3);
        assert_eq!(cosine_threshold_clusters(&z, -0.999).unwrap().num_clusters, 1);
        // A~B and B~C but not A~C
        let a = [1.0, 0.0];
        let rot = |t: f64| vec![t.cos() * a[0], t.sin()];
        let chain = vec![rot(0.0), rot(0.31), rot(0.62)];
        let c = cosine_threshold_clusters(&chain, 0.9).unwrap();
        assert!(cosine_sim(&chain[0], &chain[2]).unwrap() < 0.9);
        assert_eq!(c.labels, vec![0, 0, 0]);
        assert!(cosine_threshold_clusters(&[vec![0.0, 0.0], vec![1.0, 0.0]], 0.5).is_err());
    }

    #[test]
    fn kmeans_degenerate_k() {
        let z: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let all = kmeans(&z, 5, 0, &KmeansConfig::default()).unwrap();
        assert_eq!(all.inertia, 0.0);
        assert_eq!(all.assignment.labels, vec![0, 1, 2, 3, 4]);
        let one = kmeans(&z, 1, 0, &KmeansConfig::default()).unwrap();
        assert_eq!(one.assignment.num_clusters, 1);
        assert!((one.centroids[0][0] - 2.0).abs() < 1e-9 && (one.centroids[0][1] - 6.0).abs() < 1e-9);
        assert!(matches!(kmeans(&z, 6, 0, &KmeansConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn kmeans_history_descends_and_ends_at_a_fixed_point() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<Vec<f64>> = (0..60).map(|_| vec![r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>()]).collect();
        let km = kmeans(&z, 4, 3, &KmeansConfig::default()).unwrap();
        for w in km.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let (again, _) = assign(&z, &km.centroids);
        assert_eq!(again, km.assignment.labels);
    }

    #[test]
    fn pca_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let z: Vec<Vec<f64>> = (0..50).map(|_| vec![r.gen::<f64>() * 3.0, r.gen::<f64>()]).collect();
        let p = pca(&z, 2).unwrap();
        // 2-D to 2-D is a rotation: pairwise distances survive
        for i in 0..5 {
            for j in 0..5 {
                assert!((sq_dist(&z[i], &z[j]) - sq_dist(&p.coords[i], &p.coords[j])).abs() < 1e-9);
            }
        }
        assert!(pca(&z[..2], 2).is_err());
        let flat: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(pca(&flat, 2), Err(Error::Input(_))));
    }

    #[test]
    fn canonical_labels_follow_first_appearance() {
        assert_eq!(canonical_labels(&[4, 4, 1, 7, 1]), vec![0, 0, 1, 2, 1]);
    }
}
