//! On-disk formats for chroma clips: the binary dataset file, the label
//! sidecar CSV, and WAV input.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chroma::{chroma_energy, normalize_frames, silence_floor, tonic_normalize};
use super::{ChromaClip, Frame, SourceContext, PITCH_CLASSES};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"ONRC";

/// Serialize clips. Frames are stored pitch-class major: all `T` values of
/// pitch class 0, then pitch class 1, and so on.
pub fn encode_dataset(clips: &[ChromaClip]) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC);
    w.len_u32(clips.len(), "clip count")?;
    for c in clips {
        if c.frames.is_empty() {
            return Err(Error::Input(format!("clip {} has no frames", c.clip_id)));
        }
        w.u64(c.clip_id);
        w.u64(c.source_id);
        let label = match c.label {
            None => -1,
            Some(l) => i32::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit in i32")))?,
        };
        w.i32(label);
        w.len_u32(c.frames.len(), "frame count")?;
        for pc in 0..PITCH_CLASSES {
            for f in &c.frames {
                w.f32(f[pc] as f32);
            }
        }
    }
    Ok(w.finish())
}

/// Parse a dataset file. `frame_hop` is not stored in the file and is
/// attached to every clip.
pub fn decode_dataset(bytes: &[u8], path: &Path, frame_hop: f64) -> Result<Vec<ChromaClip>> {
    let mut r = Reader::new(bytes, path);
    r.magic(DATASET_MAGIC)?;
    let n = r.u32()? as usize;
    let mut clips = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let clip_id = r.u64()?;
        let source_id = r.u64()?;
        let label = match r.i32()? {
            -1 => None,
            l if l >= 0 => Some(l as u32),
            l => return Err(r.err(format!("invalid label {l}"))),
        };
        let t = r.u32()? as usize;
        if t == 0 {
            return Err(r.err(format!("clip {clip_id} has zero frames")));
        }
        let values = r.f32s(t * PITCH_CLASSES)?;
        if values.iter().any(|v| *v < 0.0) {
            return Err(r.err(format!("clip {clip_id} has negative chroma")));
        }
        let frames: Vec<Frame> = (0..t)
            .map(|i| std::array::from_fn(|pc| values[pc * t + i]))
            .collect();
        clips.push(ChromaClip {
            clip_id,
            source_id,
            label,
            frames,
            frame_hop,
        });
    }
    r.finish()?;
    Ok(clips)
}

pub fn write_dataset(path: &Path, clips: &[ChromaClip]) -> Result<()> {
    write_file(path, &encode_dataset(clips)?)
}

pub fn read_dataset(path: &Path, frame_hop: f64) -> Result<Vec<ChromaClip>> {
    decode_dataset(&read_file(path)?, path, frame_hop)
}

/// One row of the label sidecar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub clip_id: u64,
    pub source_id: u64,
    /// -1 for unlabeled clips.
    pub label: i64,
    pub class_name: String,
}

pub fn write_labels(path: &Path, clips: &[ChromaClip], class_names: &BTreeMap<u32, String>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in clips {
        let row = LabelRow {
            clip_id: c.clip_id,
            source_id: c.source_id,
            label: c.label.map_or(-1, i64::from),
            class_name: c
                .label
                .and_then(|l| class_names.get(&l).cloned())
                .unwrap_or_default(),
        };
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let bytes = read_file(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Mono samples in [-1, 1] and the sample rate. Multi-channel files are
/// averaged across channels.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, f64)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("unsupported sample format {fmt:?} with {bits} bits"),
            ))
        }
    }
    .map_err(|e| Error::format(path, e.to_string()))?;
    let mono = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    Ok((mono, spec.sample_rate as f64))
}

/// How a recording is cut into clips.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioClipping {
    pub window: usize,
    pub hop: usize,
    pub clip_seconds: f64,
}

impl Default for AudioClipping {
    fn default() -> Self {
        Self {
            window: 4096,
            hop: 8000,
            clip_seconds: 30.0,
        }
    }
}

/// Chroma-extract a recording, tonic-normalize it and cut it into
/// consecutive non-overlapping clips. A trailing remainder shorter than one
/// clip is dropped unless it is the only material, in which case the whole
/// recording becomes one shorter clip.
pub fn clips_from_audio(
    samples: &[f64],
    sample_rate: f64,
    tonic_pc: usize,
    clipping: &AudioClipping,
    source_id: u64,
    first_clip_id: u64,
    label: Option<u32>,
) -> Result<(Vec<ChromaClip>, SourceContext)> {
    let raw = chroma_energy(samples, sample_rate, clipping.window, clipping.hop)?;
    let frames = tonic_normalize(&raw, tonic_pc)?;
    let floor = silence_floor(&frames);
    let frame_hop = clipping.hop as f64 / sample_rate;
    let clip_frames = (clipping.clip_seconds / frame_hop).round() as usize;
    if clip_frames == 0 {
        return Err(Error::Config(format!(
            "clip length {} s is shorter than one {frame_hop} s frame",
            clipping.clip_seconds
        )));
    }
    let count = (frames.len() / clip_frames).max(1);
    let mut clips = Vec::with_capacity(count);
    let mut offsets = BTreeMap::new();
    for k in 0..count {
        let start = k * clip_frames;
        let end = (start + clip_frames).min(frames.len());
        let clip_id = first_clip_id + k as u64;
        offsets.insert(clip_id, start);
        clips.push(ChromaClip {
            clip_id,
            source_id,
            label,
            frames: normalize_frames(&frames[start..end], floor),
            frame_hop,
        });
    }
    let context = SourceContext {
        source_id,
        label,
        frames,
        floor,
        frame_hop,
        clip_offsets: offsets,
    };
    Ok((clips, context))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{reference_ragas, synth_corpus, SynthConfig};

    fn clips() -> Vec<ChromaClip> {
        let cfg = SynthConfig {
            recordings_per_class: 2,
            clips_per_recording: 2,
            clip_seconds: 4.0,
            ..SynthConfig::default()
        };
        let mut clips = synth_corpus(&reference_ragas(2, 1), &cfg, 1).unwrap().clips;
        clips[3].label = None;
        clips
    }

    #[test]
    fn dataset_round_trip_is_byte_identical() {
        let bytes = encode_dataset(&clips()).unwrap();
        let back = decode_dataset(&bytes, Path::new("mem"), 0.5).unwrap();
        assert_eq!(back[3].label, None);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn dataset_layout_is_pitch_class_major() {
        let mut f0 = [0.0; 12];
        f0[0] = 1.0;
        let mut f1 = [0.0; 12];
        f1[1] = 1.0;
        let clip = ChromaClip {
            clip_id: 7,
            source_id: 3,
            label: Some(2),
            frames: vec![f0, f1],
            frame_hop: 0.5,
        };
        let bytes = encode_dataset(&[clip]).unwrap();
        assert_eq!(&bytes[..4], b"ONRC");
        assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 4 + 4 + 24 * 4);
        let payload: Vec<f32> = bytes[32..]
            .chunks(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(&payload[..4], &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = encode_dataset(&clips()).unwrap();
        let p = Path::new("mem");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad, p, 0.5), Err(Error::Format { .. })));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1], p, 0.5), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_dataset(&long, p, 0.5), Err(Error::Format { .. })));
        let mut nan = bytes;
        nan[40..44].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_dataset(&nan, p, 0.5), Err(Error::Format { .. })));
    }

    #[test]
    fn labels_and_wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clips = clips();
        let names = BTreeMap::from([(clips[0].label.unwrap(), "alpha".to_string())]);
        let path = dir.path().join("labels.csv");
        write_labels(&path, &clips, &names).unwrap();
        let rows = read_labels(&path).unwrap();
        assert_eq!(rows.len(), clips.len());
        assert_eq!(rows[0].class_name, "alpha");
        assert_eq!(rows[3].label, -1);

        let wav = dir.path().join("tone.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&wav, spec).unwrap();
        for i in 0..16000 {
            let v = (0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 8000.0).sin() * 32767.0) as i16;
            w.write_sample(v).unwrap();
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let (samples, sr) = read_wav(&wav).unwrap();
        assert_eq!((samples.len(), sr), (16000, 8000.0));
        let clipping = AudioClipping {
            window: 2048,
            hop: 400,
            clip_seconds: 0.5,
        };
        let (clips, ctx) = clips_from_audio(&samples, sr, 9, &clipping, 4, 100, Some(1)).unwrap();
        assert_eq!(clips.len(), ctx.frames.len() / 10);
        assert_eq!(clips[1].clip_id, 101);
        // A4 lands on the tonic row after rotation
        assert!(clips[0].frames.iter().all(|f| f[0] > 0.9));
    }
}
