//! Fundamental-frequency tracking (YIN) with per-frame confidence.

use crate::signal::AudioBuffer;

pub const PITCH_WINDOW: usize = 1024;
pub const PITCH_HOP: usize = 64;
pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 2000.0;
const CMND_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct PitchTrack {
    /// Estimated f0 in Hz per frame (clamped to the search range).
    pub f0: Vec<f64>,
    /// 1 - d'(lag) at the chosen lag, clamped to [0, 1]. Near 1 for clean
    /// periodic signals, near 0 for silence and noise.
    pub confidence: Vec<f64>,
    pub hop_samples: usize,
}

impl PitchTrack {
    pub fn n_frames(&self) -> usize {
        self.f0.len()
    }
}

/// YIN pitch tracking over frames of `PITCH_WINDOW` samples every
/// `PITCH_HOP` samples, `ceil(n / hop)` frames total.
pub fn track_pitch(audio: &AudioBuffer) -> PitchTrack {
    let sr = audio.sample_rate as f64;
    let min_lag = ((sr / F0_MAX_HZ).ceil() as usize).max(2);
    let max_lag = ((sr / F0_MIN_HZ).floor() as usize).min(PITCH_WINDOW / 2);
    let integ = PITCH_WINDOW - max_lag;
    let n = audio.len();
    let n_frames = n.div_ceil(PITCH_HOP).max(1);

    let mut f0 = Vec::with_capacity(n_frames);
    let mut confidence = Vec::with_capacity(n_frames);
    let mut frame = vec![0.0; PITCH_WINDOW];
    let mut diff = vec![0.0; max_lag + 1];
    let mut cmnd = vec![0.0; max_lag + 1];
    for l in 0..n_frames {
        let start = l * PITCH_HOP;
        for (j, slot) in frame.iter_mut().enumerate() {
            let t = start + j;
            *slot = if t < n { audio.samples[t] } else { 0.0 };
        }

        // Cumulative-mean-normalized difference function.
        diff[0] = 0.0;
        cmnd[0] = 1.0;
        let mut running = 0.0;
        for tau in 1..=max_lag {
            let mut d = 0.0;
            for j in 0..integ {
                let delta = frame[j] - frame[j + tau];
                d += delta * delta;
            }
            diff[tau] = d;
            running += d;
            cmnd[tau] = if running > 0.0 { d * tau as f64 / running } else { 1.0 };
        }

        // First dip under the threshold, else the global minimum.
        let mut best = min_lag;
        let mut found = false;
        for tau in min_lag..=max_lag {
            if cmnd[tau] < CMND_THRESHOLD {
                let mut t = tau;
                while t + 1 <= max_lag && cmnd[t + 1] < cmnd[t] {
                    t += 1;
                }
                best = t;
                found = true;
                break;
            }
        }
        if !found {
            for tau in min_lag..=max_lag {
                if cmnd[tau] < cmnd[best] {
                    best = tau;
                }
            }
        }

        // Parabolic interpolation around the chosen lag, on the raw
        // difference function (the cumulative-mean normalization tilts the
        // dip and biases the vertex).
        let mut lag = best as f64;
        let mut value = cmnd[best];
        if best > 1 && best < max_lag {
            let (a, b, c) = (diff[best - 1], diff[best], diff[best + 1]);
            let denom = a - 2.0 * b + c;
            if denom.abs() > 1e-12 {
                let shift = 0.5 * (a - c) / denom;
                if shift.abs() < 1.0 {
                    lag += shift;
                }
            }
            let (a, b, c) = (cmnd[best - 1], cmnd[best], cmnd[best + 1]);
            let denom = a - 2.0 * b + c;
            if denom.abs() > 1e-12 {
                let shift = (0.5 * (a - c) / denom).clamp(-1.0, 1.0);
                value = b - 0.25 * (a - c) * shift;
            }
        }

        f0.push((sr / lag).clamp(F0_MIN_HZ, F0_MAX_HZ));
        confidence.push((1.0 - value).clamp(0.0, 1.0));
    }
    PitchTrack { f0, confidence, hop_samples: PITCH_HOP }
}
