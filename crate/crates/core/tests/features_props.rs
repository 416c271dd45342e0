
use std::collections::BTreeSet;

use proptest::prelude::*;
use raga_ncd::features::{
    extract_chroma, make_views, reference_ragas, split_dataset, synth_corpus, tonic_normalize, Frame, SplitFractions,
    SynthConfig, SyntheticRagaSpec, ViewParams,
};

fn small_config() -> SynthConfig {
    SynthConfig {
        recordings_per_class: 5,
        clips_per_recording: 3,
        clip_seconds: 10.0,
        ..SynthConfig::default()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frames_are_distributions_or_silent(
        samples in prop::collection::vec(-1.0f64..1.0, 512..4096),
        quiet in 0usize..3,
    ) {
        let mut samples = samples;
        // a silent stretch so some frames fall under the floor
        let len = samples.len();
        for v in samples[..len * quiet / 4].iter_mut() {
            *v = 0.0;
        }
        for f in extract_chroma(&samples, 8000.0, 256, 128).unwrap() {
            let s: f64 = f.iter().sum();
            prop_assert!(f.iter().all(|v| *v >= 0.0));
            prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9, "sum {}", s);
        }
    }

    #[test]
    fn twelve_single_rotations_are_the_identity(frames in prop::collection::vec(prop::array::uniform12(0.0f64..1.0), 1..20)) {
        let mut x: Vec<Frame> = frames.clone();
        for _ in 0..12 {
            x = tonic_normalize(&x, 1).unwrap();
        }
        prop_assert_eq!(x, frames);
    }

    #[test]
    fn identity_views_reproduce_clips(seed in any::<u64>()) {
        let corpus = synth_corpus(&reference_ragas(2, seed), &small_config(), seed).unwrap();
        let identity = ViewParams { shift_seconds: 0.0, gain_up: 1.0, gain_down: 1.0 };
        for clip in corpus.clips.iter().take(6) {
            let ctx = corpus.contexts.iter().find(|c| c.source_id == clip.source_id).unwrap();
            let (a, b) = make_views(clip, ctx, &identity).unwrap();
            prop_assert_eq!(&a.frames, &clip.frames);
            prop_assert_eq!(&b.frames, &clip.frames);
        }
    }

    #[test]
    fn recordings_never_leak_across_partitions(seed in any::<u64>(), train in 0.2f64..0.8) {
        let corpus = synth_corpus(&reference_ragas(5, 1), &small_config(), 2).unwrap();
        let val = (1.0 - train) / 2.0;
        let fractions = SplitFractions { train, val, test: 1.0 - train - val };
        let split = split_dataset(&corpus.clips, &[0, 1, 2], &[3, 4], fractions, seed).unwrap();
        let sources = |ix: &[usize]| ix.iter().map(|&i| corpus.clips[i].source_id).collect::<BTreeSet<_>>();
        let parts = [sources(&split.train), sources(&split.val), sources(&split.test), sources(&split.unlabeled)];
        for a in 0..4 {
            for b in a + 1..4 {
                prop_assert!(parts[a].is_disjoint(&parts[b]));
            }
        }
    }
}

#[test]
fn disjoint_note_sets_give_orthogonal_mean_chroma() {
    let spec = |id: u32, notes: [usize; 3]| {
        let mut w = [0.0; 12];
        for (k, &p) in notes.iter().enumerate() {
            w[p] = 1.0 + k as f64;
        }
        SyntheticRagaSpec::new(id, format!("r{id}"), notes.to_vec(), w, 0)
    };
    let specs = [spec(0, [0, 4, 7]), spec(1, [2, 6, 9])];
    let corpus = synth_corpus(&specs, &small_config(), 5).unwrap();
    let mean = |label: u32| {
        let mut m = [0.0; 12];
        let clips: Vec<_> = corpus.clips.iter().filter(|c| c.label == Some(label)).collect();
        for c in &clips {
            for (a, b) in m.iter_mut().zip(c.mean_chroma()) {
                *a += b / clips.len() as f64;
            }
        }
        m
    };
    assert!(cosine(&mean(0), &mean(1)) < 0.1);
}

#[test]
fn a440_lands_in_pitch_class_a() {
    let sr = 16000.0;
    let samples: Vec<f64> = (0..16000).map(|n| (2.0 * std::f64::consts::PI * 440.0 * n as f64 / sr).sin()).collect();
    // independent check: the strongest bin of a direct DFT over one window
    let window = 4096;
    let peak = (1..window / 2)
        .max_by(|&a, &b| {
            let mag = |k: usize| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in samples[..window].iter().enumerate() {
                    let ph = 2.0 * std::f64::consts::PI * (k * n) as f64 / window as f64;
                    re += x * ph.cos();
                    im -= x * ph.sin();
                }
                re * re + im * im
            };
            mag(a).total_cmp(&mag(b))
        })
        .unwrap();
    let freq = peak as f64 * sr / window as f64;
    let pc = ((12.0 * (freq / 440.0).log2()).round() as i64 + 9).rem_euclid(12);
    assert_eq!(pc, 9);
    let frames = extract_chroma(&samples, sr, window, 2048).unwrap();
    let mass: f64 = frames.iter().map(|f| f[9]).sum::<f64>() / frames.len() as f64;
    assert!(mass >= 0.9, "{mass}");
}
