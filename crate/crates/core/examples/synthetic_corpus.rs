//! Generate a synthetic raga catalog and chroma corpus, split it into
//! labeled/unlabeled partitions and write it in the binary dataset format.
//!
//! cargo run --release --example synthetic_corpus -- [seed]

use std::collections::BTreeMap;

use raga_ncd::features::io::{read_dataset, write_dataset};
use raga_ncd::features::{reference_ragas, split_dataset, synth_corpus, SplitFractions, SynthConfig};

const NOTES: [&str; 12] = ["S", "r", "R", "g", "G", "m", "M", "P", "d", "D", "n", "N"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?;
    let specs = reference_ragas(8, seed);
    for s in &specs {
        let notes: Vec<&str> = s.allowed.iter().map(|&p| NOTES[(p + 12 - s.tonic) % 12]).collect();
        println!("{:>3} {:<10} tonic {:>2}  {}", s.class_id, s.name, s.tonic, notes.join(" "));
    }

    let config = SynthConfig {
        recordings_per_class: 4,
        clips_per_recording: 4,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&specs, &config, seed)?;
    let labeled: Vec<u32> = (0..5).collect();
    let novel: Vec<u32> = (5..8).collect();
    let split = split_dataset(&corpus.clips, &labeled, &novel, SplitFractions::default(), seed)?;
    println!(
        "{} clips from {} recordings: {} train, {} val, {} test, {} unlabeled",
        corpus.clips.len(),
        corpus.contexts.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        split.unlabeled.len()
    );

    // average chroma profile per class, tonic at index 0
    let mut profiles: BTreeMap<u32, [f64; 12]> = BTreeMap::new();
    for clip in &corpus.clips {
        let p = profiles.entry(clip.label.unwrap()).or_insert([0.0; 12]);
        for f in &clip.frames {
            for (acc, v) in p.iter_mut().zip(f) {
                *acc += v;
            }
        }
    }
    for (class, p) in &profiles {
        let total: f64 = p.iter().sum();
        let bars: String = p.iter().map(|v| if v / total > 0.05 { '#' } else { '.' }).collect();
        println!("class {class}: {bars}");
    }

    let path = std::env::temp_dir().join(format!("synthetic-{seed}.onrc"));
    write_dataset(&path, &corpus.clips)?;
    // frames are stored as f32, so the first write quantizes and later ones are exact
    let back = read_dataset(&path, config.frame_hop)?;
    let again = std::env::temp_dir().join(format!("synthetic-{seed}-again.onrc"));
    write_dataset(&again, &back)?;
    assert_eq!(std::fs::read(&path)?, std::fs::read(&again)?);
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    Ok(())
}
