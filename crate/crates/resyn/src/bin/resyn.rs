//! Command-line front end: fit synth parameters to audio and resynthesize.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resyn::error::Error;
use resyn::filters::{ImpulseResponse, NOISE_HOP};
use resyn::fit::{self, FitConfig};
use resyn::loss::{multiscale_spectral_loss, SpectralLossConfig};
use resyn::loudness::loudness_db;
use resyn::metrics::{f0_l1_midi, f0_outlier_fraction, loudness_l1};
use resyn::params::SynthParams;
use resyn::pitch::{track_pitch, F0_MIN_HZ};
use resyn::signal::{stft_magnitude, AudioBuffer, CONTROL_HOP};
use resyn::wav;

const EXIT_SELFCHECK: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "resyn", version, about = "Differentiable harmonic-plus-noise resynthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FitArgs {
    /// Number of optimization steps.
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    /// Also optimize the f0 track (frozen by default).
    #[arg(long)]
    fit_f0: bool,
    /// Seed of the deterministic noise excitation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record a loss-history entry every this many steps.
    #[arg(long, default_value_t = 100)]
    log_interval: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Fit synth parameters to a WAV file.
    Fit {
        /// Target audio (mono 16-bit PCM WAV).
        input: PathBuf,
        /// Output parameter file (JSON).
        #[arg(long)]
        params_out: PathBuf,
        /// Optionally write the resynthesized audio too.
        #[arg(long)]
        render_out: Option<PathBuf>,
        /// Also fit a room impulse response.
        #[arg(long)]
        fit_reverb: bool,
        /// Length of the fitted impulse response in samples.
        #[arg(long, default_value_t = 8000)]
        ir_length: usize,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Render audio from a parameter file.
    Render {
        params: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Skip the reverb stage.
        #[arg(long)]
        dry: bool,
    },
    /// Fit with a trainable impulse response, then render without it.
    Dereverb {
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        params_out: Option<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        ir_length: usize,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Re-render a parameter file inside another room.
    Transfer {
        /// Parameters of the (dry) source.
        params: PathBuf,
        /// Either a WAV impulse response...
        #[arg(long, conflicts_with = "reference_params")]
        ir_wav: Option<PathBuf>,
        /// ...or a parameter file whose fitted reverb is borrowed.
        #[arg(long)]
        reference_params: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Shift the fundamental of a parameter file by semitones and render.
    Shift {
        params: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        semitones: f64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        params_out: Option<PathBuf>,
    },
    /// Compare two WAV files: spectral loss, f0 and loudness distances.
    Metrics {
        reference: PathBuf,
        estimate: PathBuf,
        /// Emit a JSON object instead of plain text.
        #[arg(long)]
        json: bool,
    },
    /// Write a grayscale log-magnitude spectrogram PNG.
    Spectrogram {
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2048)]
        fft_size: usize,
        #[arg(long, default_value_t = 0.75)]
        overlap: f64,
    },
    /// Run the built-in numerical self checks.
    Selfcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io(_) | Error::Format(_) => EXIT_IO,
                Error::Config(_) => EXIT_CONFIG,
                Error::Numeric(_) => EXIT_NUMERIC,
            })
        }
    }
}

fn run(command: Command) -> resyn::Result<ExitCode> {
    match command {
        Command::Fit { input, params_out, render_out, fit_reverb, ir_length, fit } => {
            let target = load_padded(&input)?;
            let init = initial_params(&target)?;
            let cfg = fit_config(&fit, fit_reverb, ir_length);
            let result = fit::fit(&target, &init, &cfg)?;
            report_fit(&result);
            resyn::params::save(&result.params, &params_out)?;
            if let Some(path) = render_out {
                wav::write_wav(&path, &fit::render(&result.params)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Render { params, output, dry } => {
            let p = resyn::params::load(&params)?;
            let audio = if dry { fit::render_dry(&p)? } else { fit::render(&p)? };
            wav::write_wav(&output, &audio)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Dereverb { input, output, params_out, ir_length, fit } => {
            let target = load_padded(&input)?;
            let init = initial_params(&target)?;
            let cfg = fit_config(&fit, true, ir_length);
            let result = fit::fit(&target, &init, &cfg)?;
            report_fit(&result);
            wav::write_wav(&output, &fit::render_dry(&result.params)?)?;
            if let Some(path) = params_out {
                resyn::params::save(&result.params, &path)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Transfer { params, ir_wav, reference_params, output } => {
            let p = resyn::params::load(&params)?;
            let ir = match (ir_wav, reference_params) {
                (Some(path), None) => {
                    let audio = wav::read_wav(&path)?;
                    Some(ImpulseResponse::new(audio.samples)?)
                }
                (None, Some(path)) => {
                    let reference = resyn::params::load(&path)?;
                    Some(reference.reverb.ok_or_else(|| {
                        Error::config("reference parameter file carries no reverb")
                    })?)
                }
                (None, None) => None,
                (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
            };
            let p = fit::with_reverb(p, ir);
            wav::write_wav(&output, &fit::render(&p)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Shift { params, semitones, output, params_out } => {
            let p = fit::pitch_shift(resyn::params::load(&params)?, semitones)?;
            wav::write_wav(&output, &fit::render(&p)?)?;
            if let Some(path) = params_out {
                resyn::params::save(&p, &path)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Metrics { reference, estimate, json } => {
            let a = wav::read_wav(&reference)?;
            let b = wav::read_wav(&estimate)?;
            let loss = multiscale_spectral_loss(&a, &b, &SpectralLossConfig::default())?;
            let (ta, tb) = (track_pitch(&a), track_pitch(&b));
            let f0 = f0_l1_midi(&ta, &tb)?;
            let outliers = f0_outlier_fraction(&ta, &tb)?;
            let ldn = loudness_l1(&loudness_db(&a), &loudness_db(&b))?;
            if json {
                println!(
                    "{}",
                    serde_json::json!({
                        "spectral_loss": loss.total,
                        "f0_l1_midi": f0,
                        "f0_outlier_fraction": outliers,
                        "loudness_l1_db": ldn,
                    })
                );
            } else {
                println!("spectral loss: {:.6}", loss.total);
                match f0 {
                    Some(v) => println!("f0 L1 (midi): {v:.4}"),
                    None => println!("f0 L1 (midi): n/a (no mutually voiced frames)"),
                }
                match outliers {
                    Some(v) => println!("f0 outliers (>1 semitone): {:.1}%", v * 100.0),
                    None => println!("f0 outliers: n/a"),
                }
                println!("loudness L1: {ldn:.3} dB");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Spectrogram { input, output, fft_size, overlap } => {
            let audio = wav::read_wav(&input)?;
            write_spectrogram_png(&audio, fft_size, overlap, &output)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selfcheck => {
            let failures = selfcheck();
            if failures == 0 {
                println!("selfcheck: all checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("selfcheck: {failures} check(s) failed");
                Ok(ExitCode::from(EXIT_SELFCHECK))
            }
        }
    }
}

fn fit_config(args: &FitArgs, fit_reverb: bool, ir_length: usize) -> FitConfig {
    FitConfig {
        steps: args.steps,
        learning_rate: args.learning_rate,
        freeze_f0: !args.fit_f0,
        fit_reverb,
        ir_length,
        noise_seed: args.seed,
        log_interval: args.log_interval,
        ..FitConfig::default()
    }
}

fn report_fit(result: &fit::FitResult) {
    for h in &result.history {
        println!("step {:>6}  loss {:.6}  lr {:.6}", h.step, h.loss, h.learning_rate);
    }
    println!("loss: {:.6} -> {:.6}", result.initial_loss, result.final_loss);
}

/// Load a WAV and zero-pad it to a whole number of noise frames.
fn load_padded(path: &Path) -> resyn::Result<AudioBuffer> {
    let mut audio = wav::read_wav(path)?;
    let n = audio.len().div_ceil(NOISE_HOP) * NOISE_HOP;
    audio.samples.resize(n, 0.0);
    Ok(audio)
}

/// Neutral parameters with the f0 track seeded from the pitch tracker.
/// Unvoiced frames hold the nearest voiced estimate.
fn initial_params(target: &AudioBuffer) -> resyn::Result<SynthParams> {
    let track = track_pitch(target);
    let n_frames = target.len() / CONTROL_HOP;
    let mut f0 = vec![0.0; n_frames];
    let mut last = 0.0;
    for (i, slot) in f0.iter_mut().enumerate() {
        if track.confidence[i] >= 0.5 {
            last = track.f0[i];
        }
        *slot = last;
    }
    // back-fill any unvoiced prefix, falling back to the range floor
    let mut last = 0.0;
    for slot in f0.iter_mut().rev() {
        if *slot > 0.0 {
            last = *slot;
        } else {
            *slot = last;
        }
    }
    for slot in f0.iter_mut() {
        if *slot <= 0.0 {
            *slot = F0_MIN_HZ;
        }
    }
    let mut params = SynthParams::neutral(target.sample_rate, target.len(), F0_MIN_HZ)?;
    params.harmonic.f0.data = f0;
    Ok(params)
}

fn write_spectrogram_png(
    audio: &AudioBuffer,
    fft_size: usize,
    overlap: f64,
    path: &Path,
) -> resyn::Result<()> {
    let spec = stft_magnitude(audio, fft_size, overlap)?;
    let bins = spec.n_bins();
    let floor_db = -100.0f64;
    let peak = spec.magnitudes.iter().cloned().fold(1e-12, f64::max);
    let mut img = image::GrayImage::new(spec.n_frames as u32, bins as u32);
    for f in 0..spec.n_frames {
        let frame = spec.frame(f);
        for b in 0..bins {
            let db = (20.0 * (frame[b] / peak).log10()).max(floor_db);
            let v = ((db - floor_db) / -floor_db * 255.0).round() as u8;
            // low frequencies at the bottom
            img.put_pixel(f as u32, (bins - 1 - b) as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|e| Error::format(format!("png write: {e}")))?;
    Ok(())
}

/// Fast numerical sanity checks over the main pipeline stages; prints one
/// line per check.
fn selfcheck() -> usize {
    use resyn::fft::{dft, direct_convolve, fft_convolve};
    use resyn::grad_check::{finite_diff_check, sample_coords};
    use resyn::loss::{spectral_loss_vs_target, TargetSpectra};
    use resyn::synth::scaled_sigmoid_inverse;
    use resyn::tape::Tape;

    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{}: {}", name, if ok { "ok" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // FFT against the naive DFT and direct convolution
    let x: Vec<f64> = (0..256).map(|i| ((i * i) as f64 * 0.01).sin()).collect();
    let y: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).cos()).collect();
    let conv_err = fft_convolve(&x, &y)
        .iter()
        .zip(direct_convolve(&x, &y))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    check("fft convolution vs direct", conv_err < 1e-9);
    check("dft of impulse is flat", {
        let mut imp = vec![0.0; 32];
        imp[0] = 1.0;
        dft(&imp)
            .map(|s| s.iter().all(|c| (c.norm() - 1.0).abs() < 1e-12))
            .unwrap_or(false)
    });

    // oscillator closed form
    let closed_form = (|| -> resyn::Result<f64> {
        let n = 4096;
        let mut p = SynthParams::neutral(16000, n, 440.0)?;
        p.harmonic.n_harmonics = 1;
        p.harmonic.harmonic_raw =
            resyn::signal::ControlSeries::scalar(vec![0.0; n / CONTROL_HOP], CONTROL_HOP)?;
        p.harmonic.amplitude_raw.data.iter_mut().for_each(|v| *v = scaled_sigmoid_inverse(1.0));
        p.noise.magnitudes_raw.data.iter_mut().for_each(|v| *v = -40.0);
        let out = resyn::synth::harmonic_oscillator(&p.harmonic, 16000, n)?;
        Ok(out
            .samples
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                (s - (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin()).abs()
            })
            .fold(0.0, f64::max))
    })();
    check("oscillator closed form", closed_form.map(|e| e < 1e-6).unwrap_or(false));

    // determinism of the full render
    let deterministic = (|| -> resyn::Result<bool> {
        let p = SynthParams::neutral(16000, 1024, 220.0)?;
        Ok(fit::render(&p)? == fit::render(&p)?)
    })();
    check("render determinism", deterministic.unwrap_or(false));

    // end-to-end gradient vs finite differences on a tiny clip
    let grad_ok = (|| -> resyn::Result<bool> {
        let n = 512;
        let mut p = SynthParams::neutral(16000, n, 330.0)?;
        p.noise.magnitudes_raw.data.iter_mut().for_each(|v| *v = -2.0);
        let target: Vec<f64> = (0..n)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 392.0 * i as f64 / 16000.0).sin())
            .collect();
        let cfg = SpectralLossConfig {
            fft_sizes: vec![256, 64],
            ..SpectralLossConfig::default()
        };
        let spectra = TargetSpectra::new(&target, &cfg)?;
        let run = |vals: &[Vec<f64>]| -> resyn::Result<(f64, Vec<Vec<f64>>)> {
            let mut q = p.clone();
            q.harmonic.amplitude_raw.data = vals[0].clone();
            q.harmonic.harmonic_raw.data = vals[1].clone();
            q.noise.magnitudes_raw.data = vals[2].clone();
            let tape = Tape::new();
            let graph = fit::build_render(&tape, &q, false, false)?;
            let loss = spectral_loss_vs_target(&tape, graph.audio, &spectra)?;
            tape.backward(loss)?;
            Ok((
                tape.scalar(loss),
                vec![tape.grad(graph.amplitude), tape.grad(graph.harmonics), tape.grad(graph.noise)],
            ))
        };
        let vals = vec![
            p.harmonic.amplitude_raw.data.clone(),
            p.harmonic.harmonic_raw.data.clone(),
            p.noise.magnitudes_raw.data.clone(),
        ];
        let (_, analytic) = run(&vals)?;
        let coords = sample_coords(&vals, 6, 7);
        let err = finite_diff_check(
            |v| run(v).map(|r| r.0).unwrap_or(f64::NAN),
            &vals,
            &analytic,
            &coords,
            1e-4,
        );
        Ok(err < 1e-3)
    })();
    check("render gradient vs finite differences", grad_ok.unwrap_or(false));

    // loss identities
    let loss_ok = (|| -> resyn::Result<bool> {
        let a = AudioBuffer::new(
            (0..2048)
                .map(|i| (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )?;
        let zero = multiscale_spectral_loss(&a, &a, &SpectralLossConfig::default())?.total;
        let quiet = AudioBuffer::new(vec![0.0; 2048], 16000)?;
        let big = multiscale_spectral_loss(&a, &quiet, &SpectralLossConfig::default())?.total;
        Ok(zero == 0.0 && big > 0.1)
    })();
    check("spectral loss identities", loss_ok.unwrap_or(false));

    failures
}
