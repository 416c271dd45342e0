//! Novel class discovery: embed unseen-raga clips with a trained
//! classifier, train the contrastive attention encoder on them, and compare
//! k-means on raw embeddings against k-means on the encoder output.
//!
//! cargo run --release --example novel_class_discovery -- [seed]

use raga_ncd::classifier::{train_classifier, ClassifierConfig};
use raga_ncd::clustering::{kmeans, KmeansConfig};
use raga_ncd::features::{reference_ragas, split_dataset, synth_corpus, SplitFractions, SynthConfig};
use raga_ncd::metrics::evaluate;
use raga_ncd::ncd::{encode_all, prepare_inputs, train_encoder, NcdConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?;
    let synth = SynthConfig {
        recordings_per_class: 8,
        clips_per_recording: 6,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&reference_ragas(12, seed), &synth, seed)?;
    let labeled: Vec<u32> = (0..8).collect();
    let novel: Vec<u32> = (8..12).collect();
    let split = split_dataset(&corpus.clips, &labeled, &novel, SplitFractions::default(), seed)?;
    let clf = ClassifierConfig {
        epochs: 40,
        ..ClassifierConfig::default()
    };
    let (model, _) = train_classifier(&corpus.clips, &split, &clf, seed)?;

    let unlabeled: Vec<_> = split.unlabeled.iter().map(|&i| &corpus.clips[i]).collect();
    let labeled_clips: Vec<_> = split.train.iter().map(|&i| &corpus.clips[i]).collect();
    let config = NcdConfig {
        epochs: 20,
        lr: 0.01,
        ..NcdConfig::default()
    };
    let inputs = prepare_inputs(&model, &unlabeled, &labeled_clips, &corpus.contexts, &config)?;
    let (encoder, log) = train_encoder(&inputs, &config, seed)?;
    for e in log.epochs.iter().step_by(5) {
        println!(
            "epoch {:>3}  bce {:.4}  cl {:.4}  mse {:.5}  total {:.4}",
            e.epoch, e.bce, e.cl, e.mse, e.total
        );
    }

    let truth: Vec<usize> = unlabeled.iter().map(|c| c.label.unwrap() as usize).collect();
    let z = encode_all(&encoder, &inputs.y_u)?;
    let km = KmeansConfig::default();
    for (name, points) in [("baseline y", &inputs.y_u), ("encoder z", &z)] {
        let pred = kmeans(points, novel.len(), seed, &km)?.assignment.labels;
        let m = evaluate(points, &pred, &truth, Some((labeled.len(), novel.len())))?;
        println!(
            "{name:>10}: ari {:.3}  mi {:.3}  acc {:.1}  mapping valid {}",
            m.ari, m.mi, m.acc_matched_mass, m.mapping_valid
        );
    }
    Ok(())
}
