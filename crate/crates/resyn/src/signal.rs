//! Core signal types, windows, STFT, and frame-rate <-> sample-rate conversion.

use crate::error::{Error, Result};
use crate::fft::Fft;
use num_complex::Complex64;
use std::f64::consts::PI;

pub const DEFAULT_SAMPLE_RATE: u32 = 16000;
/// Control-frame hop: 4 ms at 16 kHz.
pub const CONTROL_HOP: usize = 64;

/// Fixed-sample-rate mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("audio buffer must be non-empty"));
        }
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::numeric("audio contains non-finite samples"));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        let e: f64 = self.samples.iter().map(|s| s * s).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Frame-rate parameter track: one scalar or fixed-width vector per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSeries {
    /// Row-major [frame][channel].
    pub data: Vec<f64>,
    pub width: usize,
    pub hop_samples: usize,
}

impl ControlSeries {
    pub fn new(data: Vec<f64>, width: usize, hop_samples: usize) -> Result<Self> {
        if width == 0 || hop_samples == 0 {
            return Err(Error::config("control series width and hop must be positive"));
        }
        if data.is_empty() || data.len() % width != 0 {
            return Err(Error::config("control series data length must be a nonzero multiple of width"));
        }
        Ok(ControlSeries { data, width, hop_samples })
    }

    pub fn scalar(frames: Vec<f64>, hop_samples: usize) -> Result<Self> {
        Self::new(frames, 1, hop_samples)
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Magnitude spectrogram grid.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// Row-major [frame][bin], bins = fft_size/2 + 1.
    pub magnitudes: Vec<f64>,
    pub n_frames: usize,
    pub fft_size: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let b = self.n_bins();
        &self.magnitudes[i * b..(i + 1) * b]
    }
}

/// Symmetric Hann window: 0.5 - 0.5*cos(2*pi*k/(N-1)).
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Periodic Hann window: 0.5 - 0.5*cos(2*pi*k/N). Used for STFT analysis,
/// where its exact spectral nulls at integer bin offsets keep bin-centered
/// sinusoids from leaking into each other (the symmetric variant does not
/// null at integer offsets and makes magnitudes phase-dependent).
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
        .collect()
}

/// Symmetric Hamming window: 0.54 - 0.46*cos(2*pi*k/(N-1)).
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / (n - 1) as f64).cos())
        .collect()
}

/// STFT framing for a given signal length: (hop, n_frames).
/// Signals shorter than one frame produce a single zero-padded frame.
pub fn stft_layout(n_samples: usize, fft_size: usize, overlap: f64) -> (usize, usize) {
    let hop = ((fft_size as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let n_frames = if n_samples < fft_size {
        1
    } else {
        (n_samples - fft_size) / hop + 1
    };
    (hop, n_frames)
}

/// Hann-windowed magnitude spectrogram, bins 0..=fft_size/2.
pub fn stft_magnitude(audio: &AudioBuffer, fft_size: usize, overlap: f64) -> Result<Spectrogram> {
    if fft_size < 2 {
        return Err(Error::config("stft fft_size must be >= 2"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::config("stft overlap must be in [0, 1)"));
    }
    let (hop, n_frames) = stft_layout(audio.len(), fft_size, overlap);
    let mags = stft_magnitude_flat(&audio.samples, fft_size, hop, n_frames);
    Ok(Spectrogram { magnitudes: mags, n_frames, fft_size, hop })
}

/// Flattened [frame][bin] magnitudes; shared by the plain API and the tape op.
pub fn stft_magnitude_flat(samples: &[f64], fft_size: usize, hop: usize, n_frames: usize) -> Vec<f64> {
    let window = hann_periodic(fft_size);
    let fft = Fft::new(fft_size);
    let n_bins = fft_size / 2 + 1;
    let mut out = vec![0.0; n_frames * n_bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for f in 0..n_frames {
        let start = f * hop;
        for (j, slot) in buf.iter_mut().enumerate() {
            let s = samples.get(start + j).copied().unwrap_or(0.0);
            *slot = Complex64::new(s * window[j], 0.0);
        }
        fft.forward(&mut buf);
        for b in 0..n_bins {
            out[f * n_bins + b] = buf[b].norm();
        }
    }
    out
}

/// Adjoint of `stft_magnitude_flat`: maps a gradient over magnitudes back to
/// a gradient over samples. The derivative of |X| at |X| = 0 is taken as 0.
pub fn stft_magnitude_backward(
    samples: &[f64],
    grad_mags: &[f64],
    fft_size: usize,
    hop: usize,
    n_frames: usize,
) -> Vec<f64> {
    let window = hann_periodic(fft_size);
    let fft = Fft::new(fft_size);
    let n_bins = fft_size / 2 + 1;
    let mut grad = vec![0.0; samples.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    let mut cgrad = vec![Complex64::new(0.0, 0.0); fft_size];
    for f in 0..n_frames {
        let start = f * hop;
        for (j, slot) in buf.iter_mut().enumerate() {
            let s = samples.get(start + j).copied().unwrap_or(0.0);
            *slot = Complex64::new(s * window[j], 0.0);
        }
        fft.forward(&mut buf);
        // d|X_b|/dx_n = w_n * Re(X_b * e^{i 2 pi b n / N}) / |X_b|;
        // summing over output bins is an inverse transform of g_b * X_b/|X_b|.
        for c in cgrad.iter_mut() {
            *c = Complex64::new(0.0, 0.0);
        }
        for b in 0..n_bins {
            let mag = buf[b].norm();
            if mag > 0.0 {
                cgrad[b] = buf[b] * (grad_mags[f * n_bins + b] / mag);
            }
        }
        fft.inverse(&mut cgrad);
        for j in 0..fft_size {
            if let Some(slot) = grad.get_mut(start + j) {
                // inverse() divides by N; undo it since we want the bare sum
                *slot += window[j] * cgrad[j].re * fft_size as f64;
            }
        }
    }
    grad
}

fn upsample_segment(n: usize, hop: usize, n_frames: usize) -> (usize, usize, f64) {
    // frame centers sit at l*hop; hold beyond the last center
    let l = n / hop;
    if l + 1 >= n_frames {
        (n_frames - 1, n_frames - 1, 0.0)
    } else {
        (l, l + 1, (n - l * hop) as f64 / hop as f64)
    }
}

/// Piecewise-linear upsampling of frame values to sample rate.
/// Frame centers at l*hop; endpoints held constant.
pub fn upsample_bilinear(frames: &[f64], hop: usize, n_samples: usize) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::config("upsample_bilinear: empty track"));
    }
    if n_samples != frames.len() * hop {
        return Err(Error::config(format!(
            "upsample_bilinear: n_samples {} != frames {} * hop {}",
            n_samples,
            frames.len(),
            hop
        )));
    }
    let mut out = vec![0.0; n_samples];
    for (n, slot) in out.iter_mut().enumerate() {
        let (l0, l1, t) = upsample_segment(n, hop, frames.len());
        *slot = frames[l0] * (1.0 - t) + frames[l1] * t;
    }
    Ok(out)
}

/// Adjoint of `upsample_bilinear`.
pub fn upsample_bilinear_transpose(grad_out: &[f64], hop: usize, n_frames: usize) -> Vec<f64> {
    let mut grad = vec![0.0; n_frames];
    for (n, &g) in grad_out.iter().enumerate() {
        let (l0, l1, t) = upsample_segment(n, hop, n_frames);
        grad[l0] += g * (1.0 - t);
        grad[l1] += g * t;
    }
    grad
}

/// Overlap-add smoothing of a frame track with Hamming windows.
/// Frame l's window is centered on its span [l*hop, (l+1)*hop).
/// Output(n) = sum_l track[l] * w(n - l*hop + hop/2), length frames*hop.
pub fn overlap_add_envelope(frames: &[f64], frame_size: usize, hop: usize) -> Result<Vec<f64>> {
    if frame_size != 2 * hop {
        return Err(Error::config("overlap_add_envelope requires frame_size = 2*hop"));
    }
    if frames.is_empty() {
        return Err(Error::config("overlap_add_envelope: empty track"));
    }
    let window = hamming(frame_size);
    let n = frames.len() * hop;
    let mut out = vec![0.0; n];
    for (l, &v) in frames.iter().enumerate() {
        let base = l as isize * hop as isize - (hop / 2) as isize;
        for (j, &w) in window.iter().enumerate() {
            let pos = base + j as isize;
            if pos >= 0 && (pos as usize) < n {
                out[pos as usize] += v * w;
            }
        }
    }
    Ok(out)
}

/// Sum of the overlapped windows at each output sample (the constant profile
/// a unit track produces). Used to normalize envelopes inside the oscillator.
pub fn ola_window_profile(n_frames: usize, frame_size: usize, hop: usize) -> Vec<f64> {
    let ones = vec![1.0; n_frames];
    overlap_add_envelope(&ones, frame_size, hop).expect("valid ola configuration")
}

/// Overlap-add envelope divided by the window-sum profile, so a constant
/// track maps to the same constant at every sample.
pub fn overlap_add_envelope_normalized(frames: &[f64], frame_size: usize, hop: usize) -> Result<Vec<f64>> {
    let mut out = overlap_add_envelope(frames, frame_size, hop)?;
    let profile = ola_window_profile(frames.len(), frame_size, hop);
    for (o, p) in out.iter_mut().zip(profile.iter()) {
        *o /= p;
    }
    Ok(out)
}

/// Adjoint of the (optionally normalized) overlap-add envelope.
pub fn overlap_add_envelope_transpose(
    grad_out: &[f64],
    n_frames: usize,
    frame_size: usize,
    hop: usize,
    normalized: bool,
) -> Vec<f64> {
    let window = hamming(frame_size);
    let profile = if normalized {
        Some(ola_window_profile(n_frames, frame_size, hop))
    } else {
        None
    };
    let n = n_frames * hop;
    let mut grad = vec![0.0; n_frames];
    for l in 0..n_frames {
        let base = l as isize * hop as isize - (hop / 2) as isize;
        let mut acc = 0.0;
        for (j, &w) in window.iter().enumerate() {
            let pos = base + j as isize;
            if pos >= 0 && (pos as usize) < n {
                let p = pos as usize;
                let scale = profile.as_ref().map_or(1.0, |pr| 1.0 / pr[p]);
                acc += grad_out[p] * w * scale;
            }
        }
        grad[l] = acc;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn stft_peak_bin_for_pure_sine() {
        let sr = 16000;
        let samples: Vec<f64> = (0..16000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / sr as f64).sin())
            .collect();
        let audio = AudioBuffer::new(samples, sr).unwrap();
        let spec = stft_magnitude(&audio, 2048, 0.75).unwrap();
        let frame = spec.frame(spec.n_frames / 2);
        let peak = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, (1000.0f64 * 2048.0 / 16000.0).round() as usize);
    }

    #[test]
    fn stft_zero_audio_zero_magnitudes() {
        let audio = AudioBuffer::new(vec![0.0; 4096], 16000).unwrap();
        let spec = stft_magnitude(&audio, 512, 0.75).unwrap();
        assert!(spec.magnitudes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn stft_frame_count_arithmetic() {
        let audio = AudioBuffer::new(vec![0.1; 64000], 16000).unwrap();
        let spec = stft_magnitude(&audio, 2048, 0.75).unwrap();
        assert_eq!(spec.hop, 512);
        assert_eq!(spec.n_frames, (64000 - 2048) / 512 + 1);
        assert_eq!(spec.n_frames, 122);
    }

    #[test]
    fn stft_short_audio_single_padded_frame() {
        let audio = AudioBuffer::new(vec![0.5; 100], 16000).unwrap();
        let spec = stft_magnitude(&audio, 512, 0.75).unwrap();
        assert_eq!(spec.n_frames, 1);
    }

    #[test]
    fn upsample_midpoint() {
        let out = upsample_bilinear(&[100.0, 200.0], 4, 8).unwrap();
        assert_eq!(out[2], 150.0);
        assert_eq!(out[0], 100.0);
        // held past the last frame center
        assert_eq!(out[7], 200.0);
    }

    #[test]
    fn upsample_constant_track() {
        let frames = vec![440.0; 250];
        let out = upsample_bilinear(&frames, 64, 16000).unwrap();
        assert_eq!(out.len(), 16000);
        assert!(out.iter().all(|&v| (v - 440.0).abs() < 1e-12));
    }

    #[test]
    fn upsample_hold_endpoint_policy() {
        let out = upsample_bilinear(&[0.0, 1.0, 0.0], 2, 6).unwrap();
        let expect = [0.0, 0.5, 1.0, 0.5, 0.0, 0.0];
        for (o, e) in out.iter().zip(expect.iter()) {
            assert!((o - e).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn upsample_length_mismatch_errors() {
        assert!(upsample_bilinear(&[1.0, 2.0], 4, 9).is_err());
    }

    #[test]
    fn ola_constant_track_matches_direct_summation() {
        let frames = vec![2.5; 20];
        let out = overlap_add_envelope(&frames, 128, 64).unwrap();
        // direct summation oracle
        let w = hamming(128);
        let n = frames.len() * 64;
        let mut oracle = vec![0.0; n];
        for l in 0..frames.len() {
            for j in 0..128 {
                let pos = l as isize * 64 - 32 + j as isize;
                if pos >= 0 && (pos as usize) < n {
                    oracle[pos as usize] += 2.5 * w[j];
                }
            }
        }
        for (o, e) in out.iter().zip(oracle.iter()) {
            assert!((o - e).abs() < 1e-12);
        }
        // interior ripple profile is the summed window pair
        let interior = &out[128..n - 128];
        let lo = interior.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = interior.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 0.1 * hi);
    }

    #[test]
    fn ola_zero_track() {
        let out = overlap_add_envelope(&[0.0; 8], 128, 64).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ola_single_frame_is_one_window() {
        let mut frames = vec![0.0; 10];
        frames[5] = 3.0;
        let out = overlap_add_envelope(&frames, 128, 64).unwrap();
        let w = hamming(128);
        for j in 0..128 {
            let pos = 5 * 64 - 32 + j;
            assert!((out[pos] - 3.0 * w[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn ola_rejects_other_overlaps() {
        assert!(overlap_add_envelope(&[1.0], 128, 32).is_err());
    }

    #[test]
    fn ola_normalized_constant_is_exact() {
        let out = overlap_add_envelope_normalized(&[1.5; 16], 128, 64).unwrap();
        assert!(out.iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn transposes_match_dot_product_identity() {
        // <A x, y> == <x, A^T y> for both resampling adjoints
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<f64> = (0..12).map(|_| r.gen_range(-1.0..1.0)).collect();
        let hop = 8;
        let n = frames.len() * hop;
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();

        let ax = upsample_bilinear(&frames, hop, n).unwrap();
        let aty = upsample_bilinear_transpose(&y, hop, frames.len());
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = frames.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        for &normalized in &[false, true] {
            let ax = if normalized {
                overlap_add_envelope_normalized(&frames, 2 * hop, hop).unwrap()
            } else {
                overlap_add_envelope(&frames, 2 * hop, hop).unwrap()
            };
            let aty = overlap_add_envelope_transpose(&y, frames.len(), 2 * hop, hop, normalized);
            let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = frames.iter().zip(&aty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn stft_homogeneity(scale in 0.1f64..10.0) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            let samples: Vec<f64> = (0..1024).map(|_| r.gen_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = samples.iter().map(|s| s * scale).collect();
            let a = stft_magnitude(&AudioBuffer::new(samples, 16000).unwrap(), 256, 0.75).unwrap();
            let b = stft_magnitude(&AudioBuffer::new(scaled, 16000).unwrap(), 256, 0.75).unwrap();
            for (ma, mb) in a.magnitudes.iter().zip(b.magnitudes.iter()) {
                prop_assert!((ma * scale - mb).abs() < 1e-9 * scale.max(1.0));
            }
        }

        #[test]
        fn ola_linearity(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(13);
            let x: Vec<f64> = (0..10).map(|_| r.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..10).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let ex = overlap_add_envelope(&x, 128, 64).unwrap();
            let ey = overlap_add_envelope(&y, 128, 64).unwrap();
            let em = overlap_add_envelope(&mixed, 128, 64).unwrap();
            for i in 0..em.len() {
                prop_assert!((em[i] - (a * ex[i] + b * ey[i])).abs() < 1e-9);
            }
        }
    }
}
