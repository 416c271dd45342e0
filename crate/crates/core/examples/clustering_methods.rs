//! The three clustering methods on Gaussian blobs: cosine-threshold
//! connected components, k-means, and PCA followed by k-means.
//!
//! cargo run --release --example clustering_methods

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use raga_ncd::clustering::{cosine_threshold_clusters, kmeans, reduce_then_kmeans, KmeansConfig};
use raga_ncd::metrics::ari;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.3)?;
    let d = 16;
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|c| (0..d).map(|j| if j % 4 == c { 3.0 } else { 0.0 }).collect())
        .collect();
    let (mut z, mut truth) = (Vec::new(), Vec::new());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..25 {
            z.push(center.iter().map(|v| v + rng.sample(noise)).collect::<Vec<f64>>());
            truth.push(c);
        }
    }

    let cfg = KmeansConfig::default();
    let km = kmeans(&z, 4, 1, &cfg)?;
    println!(
        "kmeans: inertia {:.2} after {} iterations (restart {}), ari {:.3}",
        km.inertia,
        km.history.len(),
        km.best_restart,
        ari(&km.assignment.labels, &truth)?
    );
    let (rk, pca) = reduce_then_kmeans(&z, 2, 4, 1, &cfg)?;
    println!(
        "pca(2)+kmeans: {:.1}% variance kept, ari {:.3}",
        100.0 * pca.explained_variance_ratio(),
        ari(&rk.assignment.labels, &truth)?
    );
    for th in [0.5, 0.8, 0.95] {
        let a = cosine_threshold_clusters(&z, th)?;
        println!(
            "cosine threshold {th}: {} clusters, ari {:.3}",
            a.num_clusters,
            ari(&a.labels, &truth)?
        );
    }
    Ok(())
}
