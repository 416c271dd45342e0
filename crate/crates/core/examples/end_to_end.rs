//! Full synthetic pipeline: corpus, classifier, MC-dropout OOD detection,
//! encoder training, clustering and metrics for proposed vs baseline.
//!
//! cargo run --release --example end_to_end -- [seed] [out_dir]

use raga_ncd::pipeline::{run_pipeline, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let out = args.next().unwrap_or_else(|| "out/end_to_end".into());

    let mut config = ExperimentConfig::synthetic(seed);
    config.out_dir = out.into();
    config.ncd.lr = 0.01;

    let report = run_pipeline(&config)?;
    let ood = report.ood.as_ref().expect("ood stage ran");
    println!("OOD accuracy {:.1}% (threshold {:.3e})", ood.accuracy, ood.threshold);
    let metrics = report.metrics.as_ref().expect("metrics stage ran");
    let show = |name: &str, m: &raga_ncd::metrics::MetricsReport| {
        println!(
            "{name:>8}: ari {:.3}  mi {:.3}  acc {}  valid {}",
            m.ari,
            m.mi,
            m.acc_overall.map_or("n/a".into(), |a| format!("{a:.1}")),
            m.mapping_valid
        );
    };
    show("proposed", &metrics.proposed);
    if let Some(b) = &metrics.baseline {
        show("baseline", b);
    }
    for (stage, secs) in &report.runtime.seconds {
        println!("{stage:>10}: {secs:.1} s");
    }
    println!("report digest {}", report.digest()?);
    Ok(())
}
