//! Harmonic additive oscillator bank and its parameter nonlinearities.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::{
    overlap_add_envelope_normalized, upsample_bilinear, AudioBuffer, ControlSeries, CONTROL_HOP,
};

/// Harmonic count of the additive synthesizer.
pub const N_HARMONICS: usize = 101;
/// Envelope frame size for amplitude/harmonic smoothing (8 ms, 50% overlap).
pub const ENVELOPE_FRAME: usize = 128;
/// Activation floor shared by amplitudes and filter magnitudes.
pub const ACTIVATION_FLOOR: f64 = 1e-7;

/// Modified sigmoid used for all positive synth parameters:
/// y = 2*sigmoid(x)^ln(10) + 1e-7, range (1e-7, 2+1e-7).
pub fn scaled_sigmoid(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    2.0 * s.powf(std::f64::consts::LN_10) + ACTIVATION_FLOOR
}

pub fn scaled_sigmoid_slice(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| scaled_sigmoid(x)).collect()
}

/// Unconstrained parameters of the harmonic synthesizer.
#[derive(Debug, Clone)]
pub struct HarmonicParams {
    /// Hz per frame, hop 64.
    pub f0: ControlSeries,
    /// Pre-activation of the global amplitude A(n).
    pub amplitude_raw: ControlSeries,
    /// Pre-activation of the harmonic distribution, width = n_harmonics.
    pub harmonic_raw: ControlSeries,
    pub n_harmonics: usize,
}

impl HarmonicParams {
    pub fn zeros(n_frames: usize, n_harmonics: usize, f0_hz: f64) -> Self {
        HarmonicParams {
            f0: ControlSeries::scalar(vec![f0_hz; n_frames], CONTROL_HOP).expect("nonzero frames"),
            amplitude_raw: ControlSeries::scalar(vec![0.0; n_frames], CONTROL_HOP).expect("nonzero frames"),
            harmonic_raw: ControlSeries::new(vec![0.0; n_frames * n_harmonics], n_harmonics, CONTROL_HOP)
                .expect("nonzero frames"),
            n_harmonics,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.f0.n_frames()
    }

    fn validate(&self, n_samples: usize) -> Result<()> {
        let frames = self.f0.n_frames();
        if self.amplitude_raw.n_frames() != frames || self.harmonic_raw.n_frames() != frames {
            return Err(Error::config("harmonic parameter tracks disagree on frame count"));
        }
        if self.harmonic_raw.width != self.n_harmonics {
            return Err(Error::config("harmonic_raw width != n_harmonics"));
        }
        if n_samples != frames * self.f0.hop_samples {
            return Err(Error::config(format!(
                "n_samples {} != {} frames * hop {}",
                n_samples, frames, self.f0.hop_samples
            )));
        }
        if self.f0.data.iter().any(|&f| f <= 0.0) {
            return Err(Error::config("f0 frames must be positive"));
        }
        Ok(())
    }
}

/// Per-frame normalized harmonic distribution from raw values:
/// c = scaled_sigmoid(raw) / sum(scaled_sigmoid(raw)).
pub fn normalize_harmonics(raw_row: &[f64]) -> Vec<f64> {
    let s = scaled_sigmoid_slice(raw_row);
    let denom: f64 = s.iter().sum();
    s.into_iter().map(|v| v / denom).collect()
}

/// 0/1 mask rows (flattened [frame][harmonic]) zeroing harmonics whose
/// frequency k*f0 exceeds Nyquist. A plain oscillator bank has no aliasing
/// guard; this hard mask is applied in the forward pass only.
pub fn nyquist_mask(f0_frames: &[f64], n_harmonics: usize, sample_rate: u32) -> Vec<f64> {
    let nyquist = sample_rate as f64 / 2.0;
    let mut mask = vec![0.0; f0_frames.len() * n_harmonics];
    for (l, &f0) in f0_frames.iter().enumerate() {
        for k in 1..=n_harmonics {
            if k as f64 * f0 <= nyquist {
                mask[l * n_harmonics + (k - 1)] = 1.0;
            }
        }
    }
    mask
}

/// Apply the Nyquist mask to a per-frame distribution and renormalize.
/// Returns the masked distribution and a flag set when at least one frame
/// lost all harmonics (silent frame).
pub fn antialias_mask(
    c: &ControlSeries,
    f0_frames: &[f64],
    sample_rate: u32,
) -> Result<(ControlSeries, bool)> {
    if c.n_frames() != f0_frames.len() {
        return Err(Error::config("antialias_mask: frame count mismatch"));
    }
    let mask = nyquist_mask(f0_frames, c.width, sample_rate);
    let mut data = vec![0.0; c.data.len()];
    let mut any_silent = false;
    for l in 0..c.n_frames() {
        let row = c.frame(l);
        let mrow = &mask[l * c.width..(l + 1) * c.width];
        let sum: f64 = row.iter().zip(mrow).map(|(v, m)| v * m).sum();
        if sum > 0.0 {
            for j in 0..c.width {
                data[l * c.width + j] = row[j] * mrow[j] / sum;
            }
        } else {
            any_silent = true;
        }
    }
    Ok((ControlSeries::new(data, c.width, c.hop_samples)?, any_silent))
}

/// Instantaneous phase track: phi(n) = 2*pi/sr * sum_{m<n} f0_up(m),
/// with the initial phase fixed to zero.
pub fn phase_track(f0_frames: &[f64], hop: usize, n_samples: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let f0_up = upsample_bilinear(f0_frames, hop, n_samples)?;
    let scale = 2.0 * PI / sample_rate as f64;
    let mut phase = vec![0.0; n_samples];
    let mut acc = 0.0;
    for (slot, &f) in phase.iter_mut().zip(f0_up.iter()) {
        *slot = acc * scale;
        acc += f;
    }
    Ok(phase)
}

/// Core oscillator sum over already-activated controls. `amp` and each
/// harmonic column are smoothed with normalized Hamming overlap-add
/// envelopes; f0 is upsampled bilinearly.
pub fn oscillator_from_activated(
    f0_frames: &[f64],
    amp_frames: &[f64],
    c_rows: &[f64],
    n_harmonics: usize,
    hop: usize,
    sample_rate: u32,
    n_samples: usize,
) -> Result<Vec<f64>> {
    let n_frames = f0_frames.len();
    let phase = phase_track(f0_frames, hop, n_samples, sample_rate)?;
    let amp_env = overlap_add_envelope_normalized(amp_frames, 2 * hop, hop)?;
    let mut out = vec![0.0; n_samples];
    let mut column = vec![0.0; n_frames];
    for k in 1..=n_harmonics {
        for l in 0..n_frames {
            column[l] = c_rows[l * n_harmonics + (k - 1)];
        }
        if column.iter().all(|&v| v == 0.0) {
            continue;
        }
        let c_env = overlap_add_envelope_normalized(&column, 2 * hop, hop)?;
        let kf = k as f64;
        for n in 0..n_samples {
            out[n] += amp_env[n] * c_env[n] * (kf * phase[n]).sin();
        }
    }
    Ok(out)
}

/// Render the harmonic branch from raw (unconstrained) parameters.
pub fn harmonic_oscillator(params: &HarmonicParams, sample_rate: u32, n_samples: usize) -> Result<AudioBuffer> {
    params.validate(n_samples)?;
    let hop = params.f0.hop_samples;
    let amp = scaled_sigmoid_slice(&params.amplitude_raw.data);
    let mut c_rows = Vec::with_capacity(params.harmonic_raw.data.len());
    for l in 0..params.harmonic_raw.n_frames() {
        c_rows.extend(normalize_harmonics(params.harmonic_raw.frame(l)));
    }
    let c = ControlSeries::new(c_rows, params.n_harmonics, hop)?;
    let (masked, _silent) = antialias_mask(&c, &params.f0.data, sample_rate)?;
    let out = oscillator_from_activated(
        &params.f0.data,
        &amp,
        &masked.data,
        params.n_harmonics,
        hop,
        sample_rate,
        n_samples,
    )?;
    AudioBuffer::new(out, sample_rate)
}

/// Invert `scaled_sigmoid` by bisection; useful for constructing raw
/// parameters that activate to a chosen value.
pub fn scaled_sigmoid_inverse(y: f64) -> f64 {
    assert!(y > ACTIVATION_FLOOR && y < 2.0 + ACTIVATION_FLOOR);
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if scaled_sigmoid(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
