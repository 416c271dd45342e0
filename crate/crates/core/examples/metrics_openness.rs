//! Clustering metrics on a hand-made assignment, including an invalid
//! cluster-to-class mapping, and the openness of several class splits.
//!
//! cargo run --release --example metrics_openness

use raga_ncd::metrics::{ari, clustering_accuracy, mutual_information, openness, silhouette};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = [0, 0, 0, 1, 1, 1, 2, 2, 2];
    let good = [5, 5, 5, 7, 7, 1, 1, 1, 1];
    let merged = [0, 0, 0, 0, 0, 0, 2, 2, 2];
    for (name, pred) in [("good", &good), ("merged", &merged)] {
        let acc = clustering_accuracy(pred, &truth)?;
        println!(
            "{name:>6}: ari {:.3}  mi {:.3} nats  acc {}  matched mass {:.1}",
            ari(pred, &truth)?,
            mutual_information(pred, &truth)?,
            acc.overall.map_or("n/a (mapping invalid)".into(), |a| format!("{a:.1}")),
            acc.matched_mass
        );
    }

    let z: Vec<Vec<f64>> = truth.iter().enumerate().map(|(i, &c)| vec![c as f64 * 10.0, i as f64 * 0.1]).collect();
    println!("silhouette of the true labels: {:.3}", silhouette(&z, &truth)?);

    println!("known  novel  openness");
    for (k, n) in [(12, 0), (12, 5), (12, 12), (24, 5), (5, 24)] {
        println!("{k:>5}  {n:>5}  {:.4}", openness(k, n)?);
    }
    Ok(())
}
