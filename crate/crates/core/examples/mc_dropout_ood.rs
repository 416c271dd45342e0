//! Monte Carlo dropout out-of-distribution detection: train on known
//! ragas, calibrate a variance threshold on validation clips and flag clips
//! of unseen ragas.
//!
//! cargo run --release --example mc_dropout_ood -- [seed]

use raga_ncd::classifier::{train_classifier, ClassifierConfig};
use raga_ncd::features::{reference_ragas, split_dataset, synth_corpus, ChromaClip, SplitFractions, SynthConfig};
use raga_ncd::ood::{calibrate_threshold, decide, mc_scores, ood_accuracy, OodConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(2), |s| s.parse())?;
    let config = SynthConfig {
        recordings_per_class: 8,
        clips_per_recording: 4,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&reference_ragas(10, seed), &config, seed)?;
    let labeled: Vec<u32> = (0..7).collect();
    let novel: Vec<u32> = (7..10).collect();
    let split = split_dataset(&corpus.clips, &labeled, &novel, SplitFractions::default(), seed)?;
    let cfg = ClassifierConfig {
        epochs: 40,
        ..ClassifierConfig::default()
    };
    let (model, log) = train_classifier(&corpus.clips, &split, &cfg, seed)?;
    println!("classifier val macro-F1 {:.3}", log.best_val_f1);

    let ood = OodConfig::default();
    let pick = |ix: &[usize]| -> Vec<ChromaClip> { ix.iter().map(|&i| corpus.clips[i].clone()).collect() };
    let score = |clips: &[ChromaClip]| mc_scores(&model, clips, ood.passes, seed, ood.aggregation);
    let val = score(&pick(&split.val))?;
    let known = score(&pick(&split.test))?;
    let unseen = score(&pick(&split.unlabeled))?;
    let mean = |s: &[raga_ncd::ood::UncertaintyScore]| s.iter().map(|x| x.score).sum::<f64>() / s.len() as f64;
    println!(
        "mean variance: known {:.3e}, unseen {:.3e} over {} passes",
        mean(&known),
        mean(&unseen),
        ood.passes
    );

    let val_scores: Vec<f64> = val.iter().map(|s| s.score).collect();
    let threshold = calibrate_threshold(&val_scores, ood.percentile)?;
    let all: Vec<_> = known.iter().chain(&unseen).cloned().collect();
    let flags: Vec<bool> = decide(&all, threshold).iter().map(|d| d.is_ood).collect();
    let truth: Vec<bool> = (0..all.len()).map(|i| i >= known.len()).collect();
    println!(
        "threshold {threshold:.3e} ({}th percentile of validation): accuracy {:.1}%",
        ood.percentile,
        ood_accuracy(&flags, &truth)?
    );
    Ok(())
}
