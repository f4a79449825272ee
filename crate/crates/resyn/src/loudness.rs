//! A-weighted frame loudness in dB.

use crate::fft::Fft;
use crate::signal::{hann, AudioBuffer};
use num_complex::Complex64;

pub const LOUDNESS_FFT_SIZE: usize = 2048;
pub const LOUDNESS_HOP: usize = 64;
pub const LOUDNESS_FLOOR_DB: f64 = -120.0;

/// IEC 61672 A-weighting curve in dB at frequency `freq` (Hz).
/// Returns -inf at DC.
pub fn a_weighting_db(freq: f64) -> f64 {
    if freq <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let f2 = freq * freq;
    let ra = 12194.0f64.powi(2) * f2 * f2
        / ((f2 + 20.6f64.powi(2))
            * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
            * (f2 + 12194.0f64.powi(2)));
    20.0 * ra.log10() + 2.00
}

/// Per-frame A-weighted loudness in dB, floored at -120 dB. Frames of
/// 2048 samples are centered every 64 samples (zero padding past the edges),
/// giving `ceil(n / 64)` values.
pub fn loudness_db(audio: &AudioBuffer) -> Vec<f64> {
    let n = audio.len();
    let fft_size = LOUDNESS_FFT_SIZE;
    let n_frames = n.div_ceil(LOUDNESS_HOP).max(1);
    let window = hann(fft_size);
    let fft = Fft::new(fft_size);
    // Amplitude weights per bin; squared below so the dB offset matches the
    // A-curve exactly.
    let sr = audio.sample_rate as f64;
    let weights: Vec<f64> = (0..=fft_size / 2)
        .map(|b| {
            let a = a_weighting_db(b as f64 * sr / fft_size as f64);
            if a.is_finite() { 10f64.powf(a / 20.0) } else { 0.0 }
        })
        .collect();
    // Normalize so a full-scale 1 kHz sine lands near 0 dB: coherent window
    // gain plus the window's noise-bandwidth factor (~1.5 for Hann), which
    // accounts for the energy the main lobe spreads into neighboring bins.
    let norm = 2.0 / window.iter().sum::<f64>();
    let wsum: f64 = window.iter().sum();
    let wsq: f64 = window.iter().map(|w| w * w).sum();
    let enbw = fft_size as f64 * wsq / (wsum * wsum);

    let mut out = Vec::with_capacity(n_frames);
    let mut frame = vec![Complex64::new(0.0, 0.0); fft_size];
    for l in 0..n_frames {
        let center = (l * LOUDNESS_HOP) as isize;
        for (j, slot) in frame.iter_mut().enumerate() {
            let t = center - (fft_size / 2) as isize + j as isize;
            let x = if t >= 0 && (t as usize) < n {
                audio.samples[t as usize] * window[j]
            } else {
                0.0
            };
            *slot = Complex64::new(x, 0.0);
        }
        fft.forward(&mut frame);
        let power: f64 = frame
            .iter()
            .take(fft_size / 2 + 1)
            .zip(&weights)
            .map(|(c, w)| {
                let a = c.norm() * norm * w;
                a * a
            })
            .sum();
        out.push((10.0 * (power / enbw).log10()).max(LOUDNESS_FLOOR_DB));
    }
    out
}
