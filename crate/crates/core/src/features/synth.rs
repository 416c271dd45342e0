//! Synthetic raga corpora emitted directly as chroma.
//!
//! A class is a set of allowed pitch classes with emission weights around a
//! tonic. A recording is a note-event sequence: notes drawn from the
//! (recording-specific) weights or by stepwise movement through the scale,
//! gamma-distributed durations, occasional rests, and a short glide from the
//! previous note at each onset.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::chroma::{normalize_frames, silence_floor, tonic_normalize};
use super::views::SourceContext;
use super::{ChromaClip, Frame, PITCH_CLASSES};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticRagaSpec {
    pub class_id: u32,
    pub name: String,
    /// Absolute pitch classes the melody may use.
    pub allowed: Vec<usize>,
    /// Emission weight per absolute pitch class; zero outside `allowed`.
    pub weights: Frame,
    pub tonic: usize,
    /// Mean note duration in seconds.
    pub note_seconds: f64,
    /// Gamma shape of the note-duration distribution.
    pub note_shape: f64,
    /// Log-normal sigma of the per-recording gain.
    pub gain_jitter: f64,
    /// Log-normal sigma applied to each note weight per recording.
    pub style_jitter: f64,
    pub rest_probability: f64,
    /// Probability of moving to a scale neighbour instead of sampling the weights.
    pub step_probability: f64,
}

impl SyntheticRagaSpec {
    /// A spec with default articulation parameters.
    pub fn new(class_id: u32, name: impl Into<String>, allowed: Vec<usize>, weights: Frame, tonic: usize) -> Self {
        Self {
            class_id,
            name: name.into(),
            allowed,
            weights,
            tonic,
            note_seconds: 0.9,
            note_shape: 3.0,
            gain_jitter: 0.3,
            style_jitter: 0.2,
            rest_probability: 0.05,
            step_probability: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let who = format!("raga spec {} ({})", self.class_id, self.name);
        if self.allowed.is_empty() {
            return Err(Error::Config(format!("{who}: no allowed pitch classes")));
        }
        if self.tonic >= PITCH_CLASSES || self.allowed.iter().any(|&p| p >= PITCH_CLASSES) {
            return Err(Error::Config(format!("{who}: pitch class outside 0..12")));
        }
        for pc in 0..PITCH_CLASSES {
            let w = self.weights[pc];
            let allowed = self.allowed.contains(&pc);
            if (allowed && !(w > 0.0 && w.is_finite())) || (!allowed && w != 0.0) {
                return Err(Error::Config(format!(
                    "{who}: weight {w} for pitch class {pc} (allowed: {allowed})"
                )));
            }
        }
        if !(self.note_seconds > 0.0 && self.note_shape > 0.0) {
            return Err(Error::Config(format!("{who}: note duration parameters must be positive")));
        }
        if self.gain_jitter < 0.0 || self.style_jitter < 0.0 {
            return Err(Error::Config(format!("{who}: jitter must be non-negative")));
        }
        if !(0.0..1.0).contains(&self.rest_probability) || !(0.0..=1.0).contains(&self.step_probability) {
            return Err(Error::Config(format!("{who}: probabilities out of range")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub recordings_per_class: usize,
    pub clips_per_recording: usize,
    pub clip_seconds: f64,
    pub frame_hop: f64,
    /// Extra audio before the first and after the last clip, so views can shift.
    pub margin_seconds: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            recordings_per_class: 12,
            clips_per_recording: 8,
            clip_seconds: 30.0,
            frame_hop: 0.5,
            margin_seconds: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn clip_frames(&self) -> Result<usize> {
        if !(self.frame_hop > 0.0) {
            return Err(Error::Config(format!("frame hop must be positive, got {}", self.frame_hop)));
        }
        if !(self.clip_seconds >= self.frame_hop) {
            return Err(Error::Config(format!(
                "clip length {} s is shorter than one {} s frame",
                self.clip_seconds, self.frame_hop
            )));
        }
        Ok((self.clip_seconds / self.frame_hop).round() as usize)
    }
}

/// Generated clips plus the full recordings they were cut from.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub clips: Vec<ChromaClip>,
    pub contexts: Vec<SourceContext>,
    pub class_names: BTreeMap<u32, String>,
}

/// Generate a corpus. Recording `r` of the class at position `c` in `specs`
/// gets `source_id = c·recordings_per_class + r`, and its clip `k` gets
/// `clip_id = source_id·clips_per_recording + k`. Each recording draws from
/// its own seeded stream, so appending classes leaves earlier ones unchanged.
pub fn synth_corpus(specs: &[SyntheticRagaSpec], config: &SynthConfig, seed: u64) -> Result<Corpus> {
    if specs.len() < 2 {
        return Err(Error::Config(format!("need at least two raga specs, got {}", specs.len())));
    }
    if config.recordings_per_class == 0 || config.clips_per_recording == 0 {
        return Err(Error::Config("recordings and clips per recording must be at least 1".into()));
    }
    let clip_frames = config.clip_frames()?;
    let margin = (config.margin_seconds.max(0.0) / config.frame_hop).round() as usize;
    let total_frames = config.clips_per_recording * clip_frames + 2 * margin;

    let mut clips = Vec::new();
    let mut contexts = Vec::new();
    let mut class_names = BTreeMap::new();
    for (c, spec) in specs.iter().enumerate() {
        spec.validate()?;
        class_names.insert(spec.class_id, spec.name.clone());
        for r in 0..config.recordings_per_class {
            let source_id = (c * config.recordings_per_class + r) as u64;
            let mut rng = rng::rng(seed, &[0x5157, spec.class_id as u64, r as u64]);
            let raw = synth_recording(spec, total_frames, config.frame_hop, &mut rng);
            let frames = tonic_normalize(&raw, spec.tonic)?;
            let floor = silence_floor(&frames);
            let mut offsets = BTreeMap::new();
            for k in 0..config.clips_per_recording {
                let clip_id = source_id * config.clips_per_recording as u64 + k as u64;
                let start = margin + k * clip_frames;
                offsets.insert(clip_id, start);
                clips.push(ChromaClip {
                    clip_id,
                    source_id,
                    label: Some(spec.class_id),
                    frames: normalize_frames(&frames[start..start + clip_frames], floor),
                    frame_hop: config.frame_hop,
                });
            }
            contexts.push(SourceContext {
                source_id,
                label: Some(spec.class_id),
                frames,
                floor,
                frame_hop: config.frame_hop,
                clip_offsets: offsets,
            });
        }
    }
    Ok(Corpus {
        clips,
        contexts,
        class_names,
    })
}

/// Raw (unnormalized, absolute-pitch) frames of one recording.
fn synth_recording(spec: &SyntheticRagaSpec, n_frames: usize, hop: f64, rng: &mut impl Rng) -> Vec<Frame> {
    let mut scale = spec.allowed.clone();
    scale.sort_unstable();
    scale.dedup();

    let gain = Normal::new(0.0, spec.gain_jitter).unwrap().sample(rng).exp();
    let style = Normal::new(0.0, spec.style_jitter).unwrap();
    let weights: Vec<f64> = scale
        .iter()
        .map(|&pc| spec.weights[pc] * style.sample(rng).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let duration = Gamma::new(spec.note_shape, spec.note_seconds / spec.note_shape).unwrap();

    let mut frames = Vec::with_capacity(n_frames);
    let mut prev: Option<usize> = None;
    while frames.len() < n_frames {
        let len = ((duration.sample(rng) / hop).round() as usize).max(1);
        if rng.gen::<f64>() < spec.rest_probability {
            frames.extend(std::iter::repeat([0.0; PITCH_CLASSES]).take(len));
            continue;
        }
        let idx = match prev {
            Some(p) if scale.len() > 1 && rng.gen::<f64>() < spec.step_probability => {
                if rng.gen::<bool>() {
                    (p + 1) % scale.len()
                } else {
                    (p + scale.len() - 1) % scale.len()
                }
            }
            _ => {
                let mut u = rng.gen::<f64>() * total;
                let mut pick = scale.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            }
        };
        for j in 0..len {
            let amp = gain * rng.gen_range(0.6..1.0);
            let mut f = [0.0; PITCH_CLASSES];
            match prev {
                Some(p) if j == 0 && p != idx => {
                    f[scale[idx]] = 0.7 * amp;
                    f[scale[p]] = 0.3 * amp;
                }
                _ => f[scale[idx]] = amp,
            }
            frames.push(f);
        }
        prev = Some(idx);
    }
    frames.truncate(n_frames);
    frames
}

/// Alternatives for the five movable scale degrees (re, ga, ma, dha, ni) as
/// semitone offsets from the tonic.
const MOVABLE: [[usize; 2]; 5] = [[1, 2], [3, 4], [5, 6], [8, 9], [10, 11]];

/// Largest Jaccard overlap allowed between the relative note sets of two
/// catalog ragas.
pub const MAX_NOTE_OVERLAP: f64 = 0.5;

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// A catalog of `n` synthetic ragas. Each picks one variant of every
/// movable degree, keeps Sa and usually Pa, omits up to two notes,
/// emphasizes two notes, and sits on a random absolute tonic. Note sets
/// that overlap an earlier raga by more than [`MAX_NOTE_OVERLAP`] are
/// redrawn; the bound is relaxed if the catalog cannot otherwise be filled.
/// Earlier entries do not depend on `n`.
pub fn reference_ragas(n: usize, seed: u64) -> Vec<SyntheticRagaSpec> {
    let mut rng = rng::rng(seed, &[0xca7a_1096]);
    let mut out: Vec<SyntheticRagaSpec> = Vec::with_capacity(n);
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut overlap = MAX_NOTE_OVERLAP;
    let mut rejected = 0usize;
    while out.len() < n {
        let mut relative = vec![0];
        relative.extend(MOVABLE.iter().map(|pair| pair[rng.gen_range(0..2)]));
        if rng.gen_bool(0.85) {
            relative.push(7);
        }
        for _ in 0..rng.gen_range(0..=2) {
            let i = rng.gen_range(1..relative.len());
            relative.remove(i);
        }
        relative.sort_unstable();
        if sets.iter().any(|s| jaccard(s, &relative) > overlap) {
            rejected += 1;
            if rejected > 10_000 {
                overlap += 0.05;
                rejected = 0;
            }
            continue;
        }
        let tonic = rng.gen_range(0..PITCH_CLASSES);
        let mut weights = [0.0; PITCH_CLASSES];
        let mut emphasis = relative.clone();
        emphasis.shuffle(&mut rng);
        for &rel in &relative {
            let mut w = rng.gen_range(0.5..1.5);
            if rel == emphasis[0] {
                w *= 3.0;
            } else if rel == emphasis[1] {
                w *= 2.0;
            }
            weights[(rel + tonic) % PITCH_CLASSES] = w;
        }
        let allowed = relative.iter().map(|r| (r + tonic) % PITCH_CLASSES).collect();
        let id = out.len() as u32;
        out.push(SyntheticRagaSpec::new(id, format!("raga-{id}"), allowed, weights, tonic));
        sets.push(relative);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::features::is_silent;

    fn small() -> SynthConfig {
        SynthConfig {
            recordings_per_class: 2,
            clips_per_recording: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn catalog_specs_are_valid_and_distinct() {
        let specs = reference_ragas(24, 3);
        let mut sets = BTreeSet::new();
        for s in &specs {
            s.validate().unwrap();
            let mut rel: Vec<usize> = s.allowed.iter().map(|p| (p + 12 - s.tonic) % 12).collect();
            rel.sort();
            assert!(sets.insert(rel));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let specs = reference_ragas(3, 1);
        let a = synth_corpus(&specs, &small(), 5).unwrap();
        let b = synth_corpus(&specs, &small(), 5).unwrap();
        assert_eq!(a.clips, b.clips);
        let c = synth_corpus(&specs, &small(), 6).unwrap();
        assert_ne!(a.clips, c.clips);
    }

    #[test]
    fn frames_are_normalized_or_silent() {
        let corpus = synth_corpus(&reference_ragas(4, 2), &small(), 9).unwrap();
        for clip in &corpus.clips {
            assert_eq!(clip.num_frames(), 60);
            for f in &clip.frames {
                assert!(f.iter().all(|v| *v >= 0.0));
                let s: f64 = f.iter().sum();
                assert!(is_silent(f) || (s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_pitch_class_spec() {
        let mut w = [0.0; 12];
        w[4] = 1.0;
        let one = SyntheticRagaSpec::new(0, "one", vec![4], w, 4);
        let other = reference_ragas(1, 0).remove(0);
        let other = SyntheticRagaSpec { class_id: 1, ..other };
        let corpus = synth_corpus(&[one, other], &small(), 1).unwrap();
        for clip in corpus.clips.iter().filter(|c| c.label == Some(0)) {
            for f in clip.frames.iter().filter(|f| !is_silent(f)) {
                assert_eq!(f[0], 1.0);
            }
        }
    }

    #[test]
    fn clip_shorter_than_a_frame_is_rejected() {
        let cfg = SynthConfig {
            clip_seconds: 0.2,
            ..small()
        };
        assert!(matches!(synth_corpus(&reference_ragas(2, 0), &cfg, 0), Err(Error::Config(_))));
        assert!(synth_corpus(&reference_ragas(1, 0), &small(), 0).is_err());
    }

    #[test]
    fn appending_classes_keeps_earlier_clips() {
        let specs = reference_ragas(3, 4);
        let a = synth_corpus(&specs[..2], &small(), 8).unwrap();
        let b = synth_corpus(&specs, &small(), 8).unwrap();
        assert_eq!(a.clips[..], b.clips[..a.clips.len()]);
    }
}
