//! Multi-scale spectral reconstruction loss.

use crate::error::{Error, Result};
use crate::signal::{stft_layout, stft_magnitude_flat, AudioBuffer};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct SpectralLossConfig {
    pub fft_sizes: Vec<usize>,
    pub overlap: f64,
    /// Weight of the log-magnitude term.
    pub alpha: f64,
    pub log_epsilon: f64,
}

impl Default for SpectralLossConfig {
    fn default() -> Self {
        SpectralLossConfig {
            fft_sizes: vec![2048, 1024, 512, 256, 128, 64],
            overlap: 0.75,
            alpha: 1.0,
            log_epsilon: 1e-7,
        }
    }
}

impl SpectralLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_sizes.is_empty() {
            return Err(Error::config("spectral loss needs at least one FFT size"));
        }
        for &s in &self.fft_sizes {
            if s < 2 || !s.is_power_of_two() {
                return Err(Error::config(format!("FFT size {s} must be a power of two >= 2")));
            }
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::config("overlap must be in [0, 1)"));
        }
        if self.alpha < 0.0 {
            return Err(Error::config("alpha must be >= 0"));
        }
        Ok(())
    }
}

/// Per-FFT-size L1 terms and their sum.
#[derive(Debug, Clone)]
pub struct SpectralLossReport {
    /// (fft_size, linear L1, log L1)
    pub per_scale: Vec<(usize, f64, f64)>,
    pub total: f64,
}

/// Precomputed target spectrograms for repeated loss evaluation during
/// fitting (the target side never needs gradients).
pub struct TargetSpectra {
    n_samples: usize,
    scales: Vec<ScaleTarget>,
    alpha: f64,
    log_epsilon: f64,
}

struct ScaleTarget {
    fft_size: usize,
    hop: usize,
    n_frames: usize,
    magnitudes: Vec<f64>,
    log_magnitudes: Vec<f64>,
}

impl TargetSpectra {
    pub fn new(target: &[f64], cfg: &SpectralLossConfig) -> Result<Self> {
        cfg.validate()?;
        let scales = cfg
            .fft_sizes
            .iter()
            .map(|&fft_size| {
                let (hop, n_frames) = stft_layout(target.len(), fft_size, cfg.overlap);
                let magnitudes = stft_magnitude_flat(target, fft_size, hop, n_frames);
                let log_magnitudes = magnitudes.iter().map(|&m| (m + cfg.log_epsilon).ln()).collect();
                ScaleTarget { fft_size, hop, n_frames, magnitudes, log_magnitudes }
            })
            .collect();
        Ok(TargetSpectra {
            n_samples: target.len(),
            scales,
            alpha: cfg.alpha,
            log_epsilon: cfg.log_epsilon,
        })
    }
}

/// Tape graph of the multi-scale loss of `audio` against a fixed target.
pub fn spectral_loss_vs_target(tape: &Tape, audio: Var, target: &TargetSpectra) -> Result<Var> {
    if tape.len_of(audio) != target.n_samples {
        return Err(Error::config("spectral loss: length mismatch with target"));
    }
    let mut total: Option<Var> = None;
    for scale in &target.scales {
        let mags = tape.stft_magnitude(audio, scale.fft_size, scale.hop, scale.n_frames);
        let tgt = tape.constant(scale.magnitudes.clone());
        let lin = tape.mean(tape.abs(tape.sub(mags, tgt)));
        let log_mags = tape.ln_offset(mags, target.log_epsilon);
        let tgt_log = tape.constant(scale.log_magnitudes.clone());
        let log_l1 = tape.mean(tape.abs(tape.sub(log_mags, tgt_log)));
        let term = tape.add(lin, tape.scale(log_l1, target.alpha));
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    Ok(total.expect("config validated non-empty"))
}

/// Tape graph of the loss between two audio nodes (both differentiable).
pub fn spectral_loss_graph(tape: &Tape, a: Var, b: Var, cfg: &SpectralLossConfig) -> Result<Var> {
    cfg.validate()?;
    let n = tape.len_of(a);
    if n != tape.len_of(b) {
        return Err(Error::config("spectral loss: signals must have equal length"));
    }
    let mut total: Option<Var> = None;
    for &fft_size in &cfg.fft_sizes {
        let (hop, n_frames) = stft_layout(n, fft_size, cfg.overlap);
        let ma = tape.stft_magnitude(a, fft_size, hop, n_frames);
        let mb = tape.stft_magnitude(b, fft_size, hop, n_frames);
        let lin = tape.mean(tape.abs(tape.sub(ma, mb)));
        let la = tape.ln_offset(ma, cfg.log_epsilon);
        let lb = tape.ln_offset(mb, cfg.log_epsilon);
        let log_l1 = tape.mean(tape.abs(tape.sub(la, lb)));
        let term = tape.add(lin, tape.scale(log_l1, cfg.alpha));
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    Ok(total.expect("config validated non-empty"))
}

/// Sum over FFT sizes of mean L1 distances between linear and log STFT
/// magnitudes.
pub fn multiscale_spectral_loss(
    a: &AudioBuffer,
    b: &AudioBuffer,
    cfg: &SpectralLossConfig,
) -> Result<SpectralLossReport> {
    cfg.validate()?;
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "spectral loss: length mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::config("spectral loss: sample rate mismatch"));
    }
    let mut per_scale = Vec::new();
    let mut total = 0.0;
    for &fft_size in &cfg.fft_sizes {
        let (hop, n_frames) = stft_layout(a.len(), fft_size, cfg.overlap);
        let ma = stft_magnitude_flat(&a.samples, fft_size, hop, n_frames);
        let mb = stft_magnitude_flat(&b.samples, fft_size, hop, n_frames);
        let n = ma.len() as f64;
        let lin: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        let log_l1: f64 = ma
            .iter()
            .zip(&mb)
            .map(|(x, y)| ((x + cfg.log_epsilon).ln() - (y + cfg.log_epsilon).ln()).abs())
            .sum::<f64>()
            / n;
        per_scale.push((fft_size, lin, log_l1));
        total += lin + cfg.alpha * log_l1;
    }
    Ok(SpectralLossReport { per_scale, total })
}
