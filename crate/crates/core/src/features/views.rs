use std::collections::BTreeMap;

use super::chroma::{normalize_frame, silence_floor};
use super::{ChromaClip, Frame};
use crate::error::{Error, Result};

/// A full recording that clips were cut from, kept so augmented views can
/// look outside the clip window.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceContext {
    pub source_id: u64,
    pub label: Option<u32>,
    /// Tonic-normalized frames before per-frame normalization.
    pub frames: Vec<Frame>,
    /// Absolute silence threshold for this recording.
    pub floor: f64,
    pub frame_hop: f64,
    /// Start frame of each clip inside `frames`.
    pub clip_offsets: BTreeMap<u64, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewParams {
    pub shift_seconds: f64,
    pub gain_up: f64,
    pub gain_down: f64,
}

impl Default for ViewParams {
    fn default() -> Self {
        Self {
            shift_seconds: 2.0,
            gain_up: 1.2,
            gain_down: 0.8,
        }
    }
}

/// Two augmented views of `clip`: view A is the window moved earlier by the
/// shift with `gain_up` applied, view B moved later with `gain_down`. Gains
/// act before silence gating and normalization. Near the recording edges
/// the shift shrinks to whatever margin exists.
pub fn make_views(clip: &ChromaClip, context: &SourceContext, params: &ViewParams) -> Result<(ChromaClip, ChromaClip)> {
    if !(params.gain_up > 0.0 && params.gain_down > 0.0) {
        return Err(Error::Config(format!(
            "view gains must be positive, got {} and {}",
            params.gain_up, params.gain_down
        )));
    }
    if !(params.shift_seconds >= 0.0) {
        return Err(Error::Config(format!("view shift must be non-negative, got {}", params.shift_seconds)));
    }
    let start = *context.clip_offsets.get(&clip.clip_id).ok_or_else(|| {
        Error::Input(format!(
            "clip {} is not part of recording {}",
            clip.clip_id, context.source_id
        ))
    })?;
    let len = clip.num_frames();
    if start + len > context.frames.len() {
        return Err(Error::Input(format!(
            "clip {} runs past the end of recording {}",
            clip.clip_id, context.source_id
        )));
    }
    let shift = (params.shift_seconds / context.frame_hop).round() as usize;
    let back = start - shift.min(start);
    let fwd = start + shift.min(context.frames.len() - start - len);

    let view = |from: usize, gain: f64| ChromaClip {
        frames: context.frames[from..from + len]
            .iter()
            .map(|f| {
                let mut g = *f;
                if gain != 1.0 {
                    g.iter_mut().for_each(|v| *v *= gain);
                }
                normalize_frame(&g, context.floor)
            })
            .collect(),
        ..clip.clone()
    };
    Ok((view(back, params.gain_up), view(fwd, params.gain_down)))
}

/// Rebuild recording contexts by concatenating each source's clips in
/// clip-id order. Used when only clip files are available.
pub fn recordings_from_clips(clips: &[ChromaClip]) -> Vec<SourceContext> {
    let mut by_source: BTreeMap<u64, Vec<&ChromaClip>> = BTreeMap::new();
    for c in clips {
        by_source.entry(c.source_id).or_default().push(c);
    }
    by_source
        .into_iter()
        .map(|(source_id, mut members)| {
            members.sort_by_key(|c| c.clip_id);
            let mut frames = Vec::new();
            let mut clip_offsets = BTreeMap::new();
            for c in &members {
                clip_offsets.insert(c.clip_id, frames.len());
                frames.extend_from_slice(&c.frames);
            }
            let floor = silence_floor(&frames);
            SourceContext {
                source_id,
                label: members[0].label,
                frames,
                floor,
                frame_hop: members[0].frame_hop,
                clip_offsets,
            }
        })
        .collect()
}
