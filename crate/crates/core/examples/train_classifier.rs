//! Train the chroma classifier on a few synthetic ragas and report
//! per-epoch loss and validation macro-F1.
//!
//! cargo run --release --example train_classifier -- [seed]

use raga_ncd::classifier::{evaluate_f1, train_classifier, ClassifierConfig};
use raga_ncd::features::{reference_ragas, split_dataset, synth_corpus, SplitFractions, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?;
    let config = SynthConfig {
        recordings_per_class: 8,
        clips_per_recording: 4,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&reference_ragas(6, seed), &config, seed)?;
    let labeled: Vec<u32> = (0..6).collect();
    let split = split_dataset(&corpus.clips, &labeled, &[], SplitFractions::default(), seed)?;

    let cfg = ClassifierConfig {
        epochs: 30,
        ..ClassifierConfig::default()
    };
    let (model, log) = train_classifier(&corpus.clips, &split, &cfg, seed)?;
    for e in log.epochs.iter().step_by(5) {
        println!("epoch {:>3}  loss {:.4}  val macro-F1 {:.3}", e.epoch, e.loss, e.val_f1);
    }
    println!("kept epoch {} (val macro-F1 {:.3})", log.best_epoch, log.best_val_f1);
    println!("test macro-F1 {:.3}", evaluate_f1(&model, &corpus.clips, &split.test)?);

    let emb = model.extract_embedding(&corpus.clips[split.test[0]])?;
    let active = emb.iter().filter(|v| **v > 0.0).count();
    println!("embedding width {}, {active} active units", emb.len());
    Ok(())
}
