//! Chroma extraction from audio: synthesize a two-note WAV, read it back,
//! extract tonic-normalized chroma clips and show the pitch-class profile.
//!
//! cargo run --release --example chroma_from_audio

use std::f64::consts::TAU;

use raga_ncd::features::io::{clips_from_audio, read_wav, AudioClipping};
use raga_ncd::features::extract_chroma;

const NOTES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rate = 22_050u32;
    // A4 for two seconds, then E5 for two seconds
    let samples: Vec<f64> = (0..4 * rate)
        .map(|i| {
            let t = f64::from(i) / f64::from(rate);
            let f = if t < 2.0 { 440.0 } else { 659.255 };
            0.5 * (TAU * f * t).sin()
        })
        .collect();

    let path = std::env::temp_dir().join("two_notes.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec)?;
    for s in &samples {
        w.write_sample((s * f64::from(i16::MAX)) as i16)?;
    }
    w.finalize()?;

    let (audio, sr) = read_wav(&path)?;
    let frames = extract_chroma(&audio, sr, 4096, 2048)?;
    println!("{} frames of absolute chroma", frames.len());
    for (i, f) in frames.iter().enumerate().step_by(8) {
        let (pc, v) = f.iter().enumerate().fold((0, 0.0), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
        println!("  t={:>4.2}s  peak {:<2} ({:.2})", i as f64 * 2048.0 / sr, NOTES[pc], v);
    }

    // tonic A (pitch class 9): the first note lands on index 0, the fifth on 7
    let clipping = AudioClipping {
        window: 4096,
        hop: 2048,
        clip_seconds: 1.0,
    };
    let (clips, ctx) = clips_from_audio(&audio, sr, 9, &clipping, 0, 0, None)?;
    println!("{} one-second clips, {:.3} s per frame", clips.len(), ctx.frame_hop);
    for c in &clips {
        let mut profile = [0.0; 12];
        for f in &c.frames {
            for (p, v) in profile.iter_mut().zip(f) {
                *p += v / c.frames.len() as f64;
            }
        }
        let row: Vec<String> = profile.iter().map(|v| format!("{v:.2}")).collect();
        println!("  clip {}: [{}]", c.clip_id, row.join(" "));
    }
    Ok(())
}
