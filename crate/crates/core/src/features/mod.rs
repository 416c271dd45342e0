//! Chroma clips: extraction from audio, tonic normalization, synthetic
//! raga corpora, augmented views and leakage-free dataset splits.

mod chroma;
pub mod io;
mod split;
mod synth;
mod views;

pub use chroma::{chroma_energy, extract_chroma, normalize_frame, normalize_frames, silence_floor, tonic_normalize, SILENCE_RATIO};
pub use split::{split_dataset, DatasetSplit, SplitFractions};
pub use synth::{reference_ragas, synth_corpus, Corpus, SynthConfig, SyntheticRagaSpec};
pub use views::{make_views, recordings_from_clips, SourceContext, ViewParams};

use crate::numkit::Tensor2;

pub const PITCH_CLASSES: usize = 12;

/// One time frame of a chromagram: energy per pitch class, C = 0.
pub type Frame = [f64; PITCH_CLASSES];

/// A fixed-length chroma excerpt of one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct ChromaClip {
    pub clip_id: u64,
    pub source_id: u64,
    pub label: Option<u32>,
    /// Per-frame sum-normalized chroma; silent frames are all zero.
    pub frames: Vec<Frame>,
    /// Seconds per frame.
    pub frame_hop: f64,
}

impl ChromaClip {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// `T × 12` tensor, one row per frame.
    pub fn to_tensor(&self) -> Tensor2 {
        frames_to_tensor(&self.frames)
    }

    /// Mean chroma vector over all frames.
    pub fn mean_chroma(&self) -> Frame {
        let mut out = [0.0; PITCH_CLASSES];
        for f in &self.frames {
            for (o, v) in out.iter_mut().zip(f) {
                *o += v;
            }
        }
        let n = self.frames.len().max(1) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

pub fn frames_to_tensor(frames: &[Frame]) -> Tensor2 {
    let data = frames.iter().flat_map(|f| f.iter().copied()).collect();
    Tensor2::from_vec(frames.len(), PITCH_CLASSES, data).expect("12 values per frame")
}

pub fn is_silent(frame: &Frame) -> bool {
    frame.iter().all(|v| *v == 0.0)
}
