//! Frequency-sampling LTV-FIR filter design and application, the filtered
//! noise source, and long-impulse-response reverb.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::fft_convolve;
use crate::signal::{hann, AudioBuffer, ControlSeries};
use crate::synth::scaled_sigmoid;

/// Magnitude bins driving the noise filter (DFT size 128).
pub const NOISE_BINS: usize = 65;
/// Hann window length for the frequency-sampling filter design.
pub const FIR_WINDOW_SIZE: usize = 257;
/// Noise-filter frame hop: 64000 samples / 250 frames.
pub const NOISE_HOP: usize = 256;

/// Per-frame causal FIR kernels applied frame-wise with overlap-add.
#[derive(Debug, Clone)]
pub struct FrameFilterBank {
    /// Row-major [frame][tap].
    pub kernels: Vec<f64>,
    pub kernel_len: usize,
    pub frame_hop: usize,
}

impl FrameFilterBank {
    pub fn n_frames(&self) -> usize {
        self.kernels.len() / self.kernel_len
    }

    pub fn kernel(&self, l: usize) -> &[f64] {
        &self.kernels[l * self.kernel_len..(l + 1) * self.kernel_len]
    }
}

/// Reverb impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub trainable: bool,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::config("impulse response must have at least one tap"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::numeric("impulse response has non-finite taps"));
        }
        Ok(ImpulseResponse { taps, trainable: false })
    }

    pub fn unit(len: usize) -> Self {
        let mut taps = vec![0.0; len.max(1)];
        taps[0] = 1.0;
        ImpulseResponse { taps, trainable: false }
    }
}

/// Linear map from `n_bins` magnitude samples to a windowed, causal,
/// linear-phase kernel of length `window_size` (row-major
/// [window_size][n_bins]).
///
/// Magnitudes are a zero-phase transfer function on the bins of a DFT of
/// size 2*(n_bins-1). The inverse transform is placed symmetrically about
/// the window center (the Nyquist-lag tap split across both ends to keep
/// exact symmetry) and shaped by a Hann window.
pub fn fir_design_matrix(n_bins: usize, window_size: usize) -> Vec<f64> {
    assert!(n_bins >= 2, "need at least two magnitude bins");
    assert!(window_size % 2 == 1, "window size must be odd");
    let dft_size = 2 * (n_bins - 1);
    let half = n_bins - 1;
    let center = (window_size - 1) / 2;
    let window = hann(window_size);
    let mut m = vec![0.0; window_size * n_bins];
    let mut place = |row: isize, lag: usize, scale: f64| {
        if row < 0 || row as usize >= window_size {
            return;
        }
        let row = row as usize;
        for b in 0..n_bins {
            // inverse-DFT coefficient of a real, even spectrum
            let coeff = if b == 0 {
                1.0
            } else if b == half {
                (PI * lag as f64).cos()
            } else {
                2.0 * (2.0 * PI * (b * lag) as f64 / dft_size as f64).cos()
            };
            m[row * n_bins + b] += scale * window[row] * coeff / dft_size as f64;
        }
    };
    place(center as isize, 0, 1.0);
    for lag in 1..half {
        place(center as isize + lag as isize, lag, 1.0);
        place(center as isize - lag as isize, lag, 1.0);
    }
    place(center as isize + half as isize, half, 0.5);
    place(center as isize - half as isize, half, 0.5);
    m
}

pub fn apply_design_matrix(matrix: &[f64], n_bins: usize, mags: &[f64]) -> Vec<f64> {
    let window_size = matrix.len() / n_bins;
    let mut kernel = vec![0.0; window_size];
    for (row, slot) in kernel.iter_mut().enumerate() {
        let coeffs = &matrix[row * n_bins..(row + 1) * n_bins];
        *slot = coeffs.iter().zip(mags).map(|(c, m)| c * m).sum();
    }
    kernel
}

pub fn apply_design_matrix_transpose(matrix: &[f64], n_bins: usize, grad_kernel: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; n_bins];
    for (row, &g) in grad_kernel.iter().enumerate() {
        let coeffs = &matrix[row * n_bins..(row + 1) * n_bins];
        for (slot, c) in grad.iter_mut().zip(coeffs) {
            *slot += c * g;
        }
    }
    grad
}

/// Frequency-sampling FIR design from one frame of magnitudes.
pub fn fir_from_magnitudes(magnitudes: &[f64], window_size: usize) -> Result<Vec<f64>> {
    if magnitudes.len() < 2 {
        return Err(Error::config("fir_from_magnitudes: need at least two magnitude bins"));
    }
    if window_size % 2 == 0 {
        return Err(Error::config("fir_from_magnitudes: window size must be odd"));
    }
    if magnitudes.iter().any(|&m| m < 0.0) {
        return Err(Error::config("fir_from_magnitudes: magnitudes must be non-negative"));
    }
    let matrix = fir_design_matrix(magnitudes.len(), window_size);
    Ok(apply_design_matrix(&matrix, magnitudes.len(), magnitudes))
}

/// Build a filter bank from per-frame magnitude vectors (already activated,
/// non-negative).
pub fn bank_from_magnitudes(mags: &ControlSeries, window_size: usize, frame_hop: usize) -> Result<FrameFilterBank> {
    let matrix = fir_design_matrix(mags.width, window_size);
    let mut kernels = Vec::with_capacity(mags.n_frames() * window_size);
    for l in 0..mags.n_frames() {
        let frame = mags.frame(l);
        if frame.iter().any(|&m| m < 0.0) {
            return Err(Error::config("negative filter magnitude"));
        }
        kernels.extend(apply_design_matrix(&matrix, mags.width, frame));
    }
    Ok(FrameFilterBank { kernels, kernel_len: window_size, frame_hop })
}

/// Frame-wise convolution with overlap-added tails, trimmed to the input
/// length. Frame tails carry into subsequent frames, so a time-constant bank
/// is exactly a direct convolution.
pub fn ltv_fir_forward(x: &[f64], kernels: &[f64], kernel_len: usize, hop: usize) -> Vec<f64> {
    let n = x.len();
    let n_frames = kernels.len() / kernel_len;
    let mut out = vec![0.0; n];
    for l in 0..n_frames {
        let seg_start = l * hop;
        if seg_start >= n {
            break;
        }
        let seg_end = (seg_start + hop).min(n);
        let kernel = &kernels[l * kernel_len..(l + 1) * kernel_len];
        for j in 0..(seg_end - seg_start) {
            let xv = x[seg_start + j];
            if xv == 0.0 {
                continue;
            }
            let base = seg_start + j;
            let t_max = kernel_len.min(n - base);
            for t in 0..t_max {
                out[base + t] += xv * kernel[t];
            }
        }
    }
    out
}

/// Gradients of `ltv_fir_forward` w.r.t. the input and the kernels.
pub fn ltv_fir_backward(
    x: &[f64],
    kernels: &[f64],
    kernel_len: usize,
    hop: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let n_frames = kernels.len() / kernel_len;
    let mut gx = vec![0.0; n];
    let mut gk = vec![0.0; kernels.len()];
    for l in 0..n_frames {
        let seg_start = l * hop;
        if seg_start >= n {
            break;
        }
        let seg_end = (seg_start + hop).min(n);
        let kernel = &kernels[l * kernel_len..(l + 1) * kernel_len];
        let gkernel = &mut gk[l * kernel_len..(l + 1) * kernel_len];
        for j in 0..(seg_end - seg_start) {
            let base = seg_start + j;
            let t_max = kernel_len.min(n - base);
            let mut acc = 0.0;
            let xv = x[base];
            for t in 0..t_max {
                let g = grad_out[base + t];
                acc += g * kernel[t];
                gkernel[t] += g * xv;
            }
            gx[base] = acc;
        }
    }
    (gx, gk)
}

/// Apply a time-varying filter bank to audio.
pub fn ltv_fir_apply(audio: &AudioBuffer, bank: &FrameFilterBank) -> Result<AudioBuffer> {
    if audio.len() != bank.n_frames() * bank.frame_hop {
        return Err(Error::config(format!(
            "ltv_fir_apply: audio length {} != {} frames * hop {}",
            audio.len(),
            bank.n_frames(),
            bank.frame_hop
        )));
    }
    let out = ltv_fir_forward(&audio.samples, &bank.kernels, bank.kernel_len, bank.frame_hop);
    AudioBuffer::new(out, audio.sample_rate)
}

/// Unconstrained magnitude inputs for the filtered-noise synthesizer.
#[derive(Debug, Clone)]
pub struct NoiseParams {
    /// width = NOISE_BINS, hop = NOISE_HOP
    pub magnitudes_raw: ControlSeries,
}

impl NoiseParams {
    pub fn zeros(n_frames: usize) -> Self {
        NoiseParams {
            magnitudes_raw: ControlSeries::new(vec![0.0; n_frames * NOISE_BINS], NOISE_BINS, NOISE_HOP)
                .expect("nonzero frames"),
        }
    }
}

/// Deterministic uniform noise in [-1, 1].
pub fn uniform_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Seeded uniform noise shaped by the activated time-varying filter.
pub fn filtered_noise(params: &NoiseParams, sample_rate: u32, n_samples: usize, seed: u64) -> Result<AudioBuffer> {
    let track = &params.magnitudes_raw;
    if n_samples != track.n_frames() * track.hop_samples {
        return Err(Error::config(format!(
            "filtered_noise: n_samples {} != {} frames * hop {}",
            n_samples,
            track.n_frames(),
            track.hop_samples
        )));
    }
    let mags = ControlSeries::new(
        track.data.iter().map(|&x| scaled_sigmoid(x)).collect(),
        track.width,
        track.hop_samples,
    )?;
    let bank = bank_from_magnitudes(&mags, FIR_WINDOW_SIZE, track.hop_samples)?;
    let noise = AudioBuffer::new(uniform_noise(n_samples, seed), sample_rate)?;
    ltv_fir_apply(&noise, &bank)
}

/// Linear convolution with the room impulse response, trimmed to the dry
/// signal's length.
pub fn reverb_apply(dry: &AudioBuffer, ir: &ImpulseResponse) -> AudioBuffer {
    let full = fft_convolve(&dry.samples, &ir.taps);
    AudioBuffer {
        samples: full[..dry.len()].to_vec(),
        sample_rate: dry.sample_rate,
    }
}
