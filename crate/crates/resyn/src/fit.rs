//! Analysis-by-synthesis: render the full synth and fit its parameters to a
//! target clip by gradient descent on the multi-scale spectral loss.

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::filters::{filtered_noise, reverb_apply, uniform_noise, ImpulseResponse, FIR_WINDOW_SIZE, NOISE_BINS, NOISE_HOP};
use crate::loss::{spectral_loss_vs_target, SpectralLossConfig, TargetSpectra};
use crate::params::SynthParams;
use crate::signal::AudioBuffer;
use crate::synth::{harmonic_oscillator, nyquist_mask};
use crate::tape::{Tape, Var};

/// Targets quieter than this RMS are treated as silence: the fit returns
/// parameters floored to the activation minimum instead of descending on a
/// gradient that is zero almost everywhere.
pub const SILENCE_RMS: f64 = 1e-6;
const FLOOR_RAW: f64 = -30.0;

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Keep the provided f0 track fixed (the default; f0 comes from the
    /// pitch tracker and the loss surface over f0 is badly non-convex).
    pub freeze_f0: bool,
    /// Also fit a room impulse response of `ir_length` taps.
    pub fit_reverb: bool,
    pub ir_length: usize,
    pub noise_seed: u64,
    pub loss: SpectralLossConfig,
    /// Record a history entry every this many steps (and always the last).
    pub log_interval: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 20_000,
            learning_rate: 0.001,
            freeze_f0: true,
            fit_reverb: false,
            ir_length: 8000,
            noise_seed: 0,
            loss: SpectralLossConfig::default(),
            log_interval: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HistoryEntry {
    pub step: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: SynthParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub history: Vec<HistoryEntry>,
}

/// Tape nodes of one full render; leaves are present for trainable inputs.
pub struct RenderGraph {
    pub audio: Var,
    pub f0: Option<Var>,
    pub amplitude: Var,
    pub harmonics: Var,
    pub noise: Var,
    pub reverb: Option<Var>,
}

/// Build the differentiable render graph for `params`. `train_f0` and
/// `train_reverb` choose whether those inputs become leaves.
pub fn build_render(
    tape: &Tape,
    params: &SynthParams,
    train_f0: bool,
    train_reverb: bool,
) -> Result<RenderGraph> {
    params.validate()?;
    let n = params.n_samples;
    let sr = params.sample_rate;
    let hop = params.harmonic.f0.hop_samples;
    let k = params.harmonic.n_harmonics;
    let n_frames = params.n_control_frames();

    // harmonic branch
    let f0 = if train_f0 {
        Some(tape.leaf(params.harmonic.f0.data.clone()))
    } else {
        None
    };
    let f0_node = f0.unwrap_or_else(|| tape.constant(params.harmonic.f0.data.clone()));
    let amplitude = tape.leaf(params.harmonic.amplitude_raw.data.clone());
    let harmonics = tape.leaf(params.harmonic.harmonic_raw.data.clone());

    let amp_env = tape.ola_envelope(tape.scaled_sigmoid(amplitude), hop);
    let mask = nyquist_mask(&params.harmonic.f0.data, k, sr);
    let c_raw = tape.div_rowsum(tape.scaled_sigmoid(harmonics), k);
    let c_masked = tape.div_rowsum(tape.mul(c_raw, tape.constant(mask.clone())), k);

    let f0_up = tape.upsample(f0_node, hop, n);
    let phase = tape.scale(
        tape.cumsum_exclusive(f0_up),
        2.0 * std::f64::consts::PI / sr as f64,
    );

    let mut terms = Vec::new();
    for h in 1..=k {
        let col_active = (0..n_frames).any(|l| mask[l * k + (h - 1)] != 0.0);
        if !col_active {
            continue;
        }
        let c_env = tape.ola_envelope(tape.gather_column(c_masked, k, h - 1), hop);
        let s = tape.sin_scaled(phase, h as f64);
        terms.push(tape.mul3(amp_env, c_env, s));
    }
    let harmonic_audio = if terms.is_empty() {
        tape.constant(vec![0.0; n])
    } else {
        tape.sum_many(&terms)
    };

    // noise branch
    let noise = tape.leaf(params.noise.magnitudes_raw.data.clone());
    let kernels = tape.fir_bank(tape.scaled_sigmoid(noise), NOISE_BINS, FIR_WINDOW_SIZE);
    let excitation = tape.constant(uniform_noise(n, params.noise_seed));
    let noise_audio = tape.ltv_fir(excitation, kernels, FIR_WINDOW_SIZE, NOISE_HOP);

    let dry = tape.add(harmonic_audio, noise_audio);

    // reverb
    let (audio, reverb) = match &params.reverb {
        Some(ir) => {
            if train_reverb {
                let ir_node = tape.leaf(ir.taps.clone());
                (tape.conv_trim(dry, ir_node), Some(ir_node))
            } else {
                let ir_node = tape.constant(ir.taps.clone());
                (tape.conv_trim(dry, ir_node), None)
            }
        }
        None => (dry, None),
    };

    Ok(RenderGraph { audio, f0, amplitude, harmonics, noise, reverb })
}

/// Plain (non-differentiable) render: harmonics + filtered noise, then the
/// room impulse response when present.
pub fn render(params: &SynthParams) -> Result<AudioBuffer> {
    params.validate()?;
    let dry = render_dry(params)?;
    Ok(match &params.reverb {
        Some(ir) => reverb_apply(&dry, ir),
        None => dry,
    })
}

/// Render skipping the reverb stage (the dereverberated signal).
pub fn render_dry(params: &SynthParams) -> Result<AudioBuffer> {
    params.validate()?;
    let harm = harmonic_oscillator(&params.harmonic, params.sample_rate, params.n_samples)?;
    let noise = filtered_noise(&params.noise, params.sample_rate, params.n_samples, params.noise_seed)?;
    let samples = harm
        .samples
        .iter()
        .zip(&noise.samples)
        .map(|(a, b)| a + b)
        .collect();
    AudioBuffer::new(samples, params.sample_rate)
}

fn floored(mut params: SynthParams) -> SynthParams {
    params.harmonic.amplitude_raw.data.iter_mut().for_each(|v| *v = FLOOR_RAW);
    params.noise.magnitudes_raw.data.iter_mut().for_each(|v| *v = FLOOR_RAW);
    params
}

/// Fit `init`'s trainable parameters to `target` with ADAM on the
/// multi-scale spectral loss. Returns the best parameters seen.
pub fn fit(target: &AudioBuffer, init: &SynthParams, cfg: &FitConfig) -> Result<FitResult> {
    init.validate()?;
    cfg.loss.validate()?;
    if target.len() != init.n_samples {
        return Err(Error::config(format!(
            "fit: target length {} != parameter n_samples {}",
            target.len(),
            init.n_samples
        )));
    }
    if target.sample_rate != init.sample_rate {
        return Err(Error::config("fit: sample rate mismatch"));
    }

    let mut init = init.clone();
    init.noise_seed = cfg.noise_seed;
    if cfg.fit_reverb && init.reverb.is_none() {
        if cfg.ir_length == 0 || cfg.ir_length > init.n_samples {
            return Err(Error::config("fit: ir_length must be in 1..=n_samples"));
        }
        let mut ir = ImpulseResponse::unit(cfg.ir_length);
        ir.trainable = true;
        init.reverb = Some(ir);
    }

    if target.rms() < SILENCE_RMS {
        let params = floored(init);
        let out = render(&params)?;
        let loss = crate::loss::multiscale_spectral_loss(&out, target, &cfg.loss)?.total;
        return Ok(FitResult {
            params,
            initial_loss: loss,
            final_loss: loss,
            history: Vec::new(),
        });
    }

    let spectra = TargetSpectra::new(&target.samples, &cfg.loss)?;
    let train_reverb = cfg.fit_reverb && init.reverb.as_ref().is_some_and(|ir| ir.trainable);

    let mut current = init.clone();
    let mut best = init.clone();
    let mut best_loss = f64::INFINITY;
    let mut initial_loss = f64::NAN;
    let mut history = Vec::new();
    let mut adam = AdamState::new(cfg.learning_rate);

    for step in 0..cfg.steps.max(1) {
        let tape = Tape::new();
        let graph = build_render(&tape, &current, !cfg.freeze_f0, train_reverb)?;
        let loss_node = spectral_loss_vs_target(&tape, graph.audio, &spectra)?;
        let loss = tape.scalar(loss_node);
        if !loss.is_finite() {
            return Err(Error::numeric(format!("fit: non-finite loss at step {step}")));
        }
        if step == 0 {
            initial_loss = loss;
        }
        if loss < best_loss {
            best_loss = loss;
            best = current.clone();
        }
        if step % cfg.log_interval.max(1) == 0 || step + 1 == cfg.steps {
            history.push(HistoryEntry {
                step,
                loss,
                learning_rate: adam.effective_learning_rate(),
            });
        }
        if cfg.steps == 0 {
            break;
        }

        tape.backward(loss_node)?;
        let mut leaves = vec![graph.amplitude, graph.harmonics, graph.noise];
        if let Some(v) = graph.f0 {
            leaves.push(v);
        }
        if let Some(v) = graph.reverb {
            leaves.push(v);
        }
        let grads: Vec<Vec<f64>> = leaves.iter().map(|&v| tape.grad(v)).collect();
        let mut values: Vec<Vec<f64>> = leaves.iter().map(|&v| tape.value(v)).collect();
        adam.step(&mut values, &grads)?;

        let mut it = values.into_iter();
        current.harmonic.amplitude_raw.data = it.next().expect("amplitude");
        current.harmonic.harmonic_raw.data = it.next().expect("harmonics");
        current.noise.magnitudes_raw.data = it.next().expect("noise");
        if !cfg.freeze_f0 {
            let f0 = it.next().expect("f0");
            if f0.iter().any(|&f| !f.is_finite() || f <= 0.0) {
                return Err(Error::numeric(format!("fit: f0 left the valid range at step {step}")));
            }
            current.harmonic.f0.data = f0;
        }
        if train_reverb {
            current.reverb.as_mut().expect("reverb present").taps = it.next().expect("ir");
        }
    }

    // score the final parameter state too
    let out = render(&current)?;
    let final_loss = crate::loss::multiscale_spectral_loss(&out, target, &cfg.loss)?.total;
    if final_loss < best_loss {
        best_loss = final_loss;
        best = current;
    }
    if cfg.steps == 0 {
        // no update happened; report the initial state
        return Ok(FitResult {
            params: best,
            initial_loss,
            final_loss: initial_loss,
            history,
        });
    }
    Ok(FitResult {
        params: best,
        initial_loss,
        final_loss: best_loss,
        history,
    })
}

/// Replace (or clear) the room impulse response for acoustic transfer.
pub fn with_reverb(mut params: SynthParams, ir: Option<ImpulseResponse>) -> SynthParams {
    params.reverb = ir;
    params
}

/// Scale the f0 track by 2^(semitones/12). Errors when the shifted
/// fundamental would cross Nyquist.
pub fn pitch_shift(mut params: SynthParams, semitones: f64) -> Result<SynthParams> {
    if !semitones.is_finite() {
        return Err(Error::config("pitch shift must be finite"));
    }
    let ratio = 2f64.powf(semitones / 12.0);
    let nyquist = params.sample_rate as f64 / 2.0;
    for f in params.harmonic.f0.data.iter_mut() {
        *f *= ratio;
        if *f >= nyquist {
            return Err(Error::config(format!(
                "pitch shift by {semitones} semitones pushes f0 to {f:.1} Hz, past Nyquist"
            )));
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scaled_sigmoid_inverse;

    fn small_params(n_samples: usize, f0: f64) -> SynthParams {
        let mut p = SynthParams::neutral(16000, n_samples, f0).unwrap();
        let amp = scaled_sigmoid_inverse(0.5);
        p.harmonic.amplitude_raw.data.iter_mut().for_each(|v| *v = amp);
        p.noise.magnitudes_raw.data.iter_mut().for_each(|v| *v = -4.0);
        p
    }

    #[test]
    fn tape_render_matches_plain_render() {
        let mut p = small_params(2048, 330.0);
        p.reverb = Some(ImpulseResponse::new(vec![0.9, 0.0, 0.0, 0.3]).unwrap());
        let plain = render(&p).unwrap();
        let tape = Tape::new();
        let graph = build_render(&tape, &p, false, false).unwrap();
        let taped = tape.value(graph.audio);
        let mut max_err = 0.0f64;
        for (a, b) in plain.samples.iter().zip(&taped) {
            max_err = max_err.max((a - b).abs());
        }
        assert!(max_err < 1e-9, "max err {max_err}");
    }

    #[test]
    fn render_is_deterministic() {
        let p = small_params(1024, 220.0);
        assert_eq!(render(&p).unwrap().samples, render(&p).unwrap().samples);
    }

    #[test]
    fn render_dry_drops_reverb() {
        let mut p = small_params(1024, 220.0);
        let dry0 = render(&p).unwrap();
        p.reverb = Some(ImpulseResponse::new(vec![1.0, 0.0, 0.5]).unwrap());
        let dry = render_dry(&p).unwrap();
        let wet = render(&p).unwrap();
        assert_eq!(dry.samples, dry0.samples);
        assert_ne!(dry.samples, wet.samples);
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let p = small_params(1024, 220.0);
        let target = render(&p).unwrap();
        let cfg = FitConfig { steps: 0, ..FitConfig::default() };
        let res = fit(&target, &p, &cfg).unwrap();
        assert_eq!(res.params.harmonic.amplitude_raw.data, p.harmonic.amplitude_raw.data);
        assert!(res.final_loss.abs() < 1e-12);
    }

    #[test]
    fn silent_target_floors_parameters() {
        let target = AudioBuffer::new(vec![0.0; 1024], 16000).unwrap();
        let p = small_params(1024, 220.0);
        let cfg = FitConfig { steps: 50, ..FitConfig::default() };
        let res = fit(&target, &p, &cfg).unwrap();
        assert!(res.history.is_empty());
        let out = render(&res.params).unwrap();
        assert!(out.rms() < 1e-4, "rms {}", out.rms());
    }

    #[test]
    fn short_fit_reduces_loss() {
        let truth = small_params(2048, 440.0);
        let target = render(&truth).unwrap();
        let mut init = truth.clone();
        init.harmonic.amplitude_raw.data.iter_mut().for_each(|v| *v = scaled_sigmoid_inverse(0.1));
        let cfg = FitConfig {
            steps: 150,
            learning_rate: 0.04,
            log_interval: 25,
            loss: SpectralLossConfig { fft_sizes: vec![1024, 256, 64], ..SpectralLossConfig::default() },
            ..FitConfig::default()
        };
        let res = fit(&target, &init, &cfg).unwrap();
        assert!(
            res.final_loss < 0.6 * res.initial_loss,
            "loss {} -> {}",
            res.initial_loss,
            res.final_loss
        );
        assert!(!res.history.is_empty());
    }

    #[test]
    fn mismatched_target_rejected() {
        let p = small_params(1024, 220.0);
        let target = AudioBuffer::new(vec![0.1; 999], 16000).unwrap();
        assert!(fit(&target, &p, &FitConfig::default()).is_err());
    }

    #[test]
    fn pitch_shift_scales_f0() {
        let p = small_params(1024, 440.0);
        let up = pitch_shift(p.clone(), 12.0).unwrap();
        assert!(up.harmonic.f0.data.iter().all(|&f| (f - 880.0).abs() < 1e-9));
        let down = pitch_shift(p.clone(), -12.0).unwrap();
        assert!(down.harmonic.f0.data.iter().all(|&f| (f - 220.0).abs() < 1e-9));
        assert!(pitch_shift(p, 60.0).is_err());
    }

    #[test]
    fn fit_reverb_attaches_trainable_ir() {
        let truth = small_params(1024, 330.0);
        let target = render(&truth).unwrap();
        let cfg = FitConfig { steps: 3, fit_reverb: true, ir_length: 64, ..FitConfig::default() };
        let res = fit(&target, &truth, &cfg).unwrap();
        let ir = res.params.reverb.expect("ir fitted");
        assert_eq!(ir.taps.len(), 64);
    }
}
