use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{Frame, PITCH_CLASSES};
use crate::error::{Error, Result};

/// Frames quieter than this fraction of the loudest frame are zeroed.
pub const SILENCE_RATIO: f64 = 1e-6;

/// Lowest frequency mapped to a pitch class (C1).
const MIN_FREQ_HZ: f64 = 32.703;

/// Magnitude-STFT chromagram. Each positive-frequency bin above C1 is
/// assigned to the nearest equal-tempered pitch class (A4 = 440 Hz, C = 0).
/// Frames below the silence floor are zero; the rest sum to one.
pub fn extract_chroma(samples: &[f64], sample_rate: f64, window: usize, hop: usize) -> Result<Vec<Frame>> {
    let raw = chroma_energy(samples, sample_rate, window, hop)?;
    Ok(normalize_frames(&raw, silence_floor(&raw)))
}

/// Unnormalized pitch-class energies, one frame per hop.
pub fn chroma_energy(samples: &[f64], sample_rate: f64, window: usize, hop: usize) -> Result<Vec<Frame>> {
    if samples.is_empty() {
        return Err(Error::Input("empty signal".into()));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::Input(format!("sample rate must be positive, got {sample_rate}")));
    }
    if window < 64 {
        return Err(Error::Input(format!("window of {window} samples is below the minimum of 64")));
    }
    if hop == 0 {
        return Err(Error::Input("hop must be at least one sample".into()));
    }
    if window > samples.len() {
        return Err(Error::Input(format!(
            "window of {window} samples exceeds signal length {}",
            samples.len()
        )));
    }

    let hann: Vec<f64> = (0..window)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window as f64).cos())
        .collect();
    let bin_pc: Vec<Option<usize>> = (0..=window / 2)
        .map(|k| {
            let freq = k as f64 * sample_rate / window as f64;
            (freq >= MIN_FREQ_HZ).then(|| pitch_class(freq))
        })
        .collect();

    let fft = FftPlanner::new().plan_fft_forward(window);
    let n_frames = 1 + (samples.len() - window) / hop;
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut raw = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let seg = &samples[t * hop..t * hop + window];
        for ((b, s), w) in buf.iter_mut().zip(seg).zip(&hann) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        let mut frame = [0.0; PITCH_CLASSES];
        for (k, pc) in bin_pc.iter().enumerate() {
            if let Some(pc) = pc {
                frame[*pc] += buf[k].norm();
            }
        }
        raw.push(frame);
    }
    Ok(raw)
}

fn pitch_class(freq: f64) -> usize {
    let midi = 69.0 + 12.0 * (freq / 440.0).log2();
    (midi.round() as i64).rem_euclid(12) as usize
}

/// Absolute energy threshold for a recording: `SILENCE_RATIO × max frame energy`.
pub fn silence_floor(frames: &[Frame]) -> f64 {
    let max = frames
        .iter()
        .map(|f| f.iter().sum::<f64>())
        .fold(0.0, f64::max);
    SILENCE_RATIO * max
}

pub fn normalize_frames(raw: &[Frame], floor: f64) -> Vec<Frame> {
    raw.iter().map(|f| normalize_frame(f, floor)).collect()
}

/// Sum-normalize one frame, or zero it if its energy is below `floor`.
/// Frames that already sum to one (within 1e-12) are returned unchanged so
/// normalization is idempotent bit-for-bit.
pub fn normalize_frame(raw: &Frame, floor: f64) -> Frame {
    let energy: f64 = raw.iter().sum();
    if !(energy > 0.0) || energy < floor {
        return [0.0; PITCH_CLASSES];
    }
    if (energy - 1.0).abs() <= 1e-12 {
        return *raw;
    }
    let mut out = *raw;
    out.iter_mut().for_each(|v| *v /= energy);
    out
}

/// Rotate pitch-class rows so `tonic_pc` lands in row 0.
pub fn tonic_normalize(frames: &[Frame], tonic_pc: usize) -> Result<Vec<Frame>> {
    if tonic_pc >= PITCH_CLASSES {
        return Err(Error::Input(format!("tonic pitch class {tonic_pc} outside 0..12")));
    }
    Ok(frames
        .iter()
        .map(|f| std::array::from_fn(|k| f[(k + tonic_pc) % PITCH_CLASSES]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_window_gives_one_zero_frame() {
        let out = extract_chroma(&vec![0.0; 512], 16_000.0, 512, 256).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn framing_arithmetic() {
        let sig: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(extract_chroma(&sig, 8000.0, 1000, 1000).unwrap().len(), 1);
        assert_eq!(extract_chroma(&sig, 8000.0, 200, 100).unwrap().len(), 9);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(extract_chroma(&[], 16_000.0, 64, 1), Err(Error::Input(_))));
        assert!(matches!(extract_chroma(&[0.0; 100], 16_000.0, 128, 1), Err(Error::Input(_))));
        assert!(matches!(extract_chroma(&[0.0; 100], 16_000.0, 32, 1), Err(Error::Input(_))));
    }

    #[test]
    fn tonic_rotation() {
        let mut f = [0.0; 12];
        f[9] = 1.0;
        let out = tonic_normalize(&[f], 9).unwrap();
        assert_eq!(out[0][0], 1.0);
        assert_eq!(tonic_normalize(&[f], 0).unwrap(), vec![f]);
        let back = tonic_normalize(&out, 3).unwrap();
        assert_eq!(back, vec![f]);
        assert!(tonic_normalize(&[f], 12).is_err());
    }

    #[test]
    fn pitch_class_of_reference_tones() {
        assert_eq!(pitch_class(440.0), 9);
        assert_eq!(pitch_class(261.63), 0);
        assert_eq!(pitch_class(55.0), 9);
        assert_eq!(pitch_class(466.16), 10);
    }
}
