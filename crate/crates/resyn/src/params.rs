//! Synth parameter container and its JSON file format.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{ImpulseResponse, NoiseParams, NOISE_BINS, NOISE_HOP};
use crate::signal::{ControlSeries, CONTROL_HOP};
use crate::synth::{HarmonicParams, N_HARMONICS};

pub const PARAMS_VERSION: u32 = 1;

/// Complete parameter set for one rendered clip.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub sample_rate: u32,
    pub n_samples: usize,
    /// Seed of the deterministic noise excitation.
    pub noise_seed: u64,
    pub harmonic: HarmonicParams,
    pub noise: NoiseParams,
    pub reverb: Option<ImpulseResponse>,
}

impl SynthParams {
    /// Neutral parameters for a clip of `n_samples` samples, which must be a
    /// multiple of both the control hop (64) and the noise hop (256).
    pub fn neutral(sample_rate: u32, n_samples: usize, f0_hz: f64) -> Result<Self> {
        if n_samples == 0 || n_samples % NOISE_HOP != 0 {
            return Err(Error::config(format!(
                "n_samples {n_samples} must be a positive multiple of {NOISE_HOP}"
            )));
        }
        Ok(SynthParams {
            sample_rate,
            n_samples,
            noise_seed: 0,
            harmonic: HarmonicParams::zeros(n_samples / CONTROL_HOP, N_HARMONICS, f0_hz),
            noise: NoiseParams::zeros(n_samples / NOISE_HOP),
            reverb: None,
        })
    }

    pub fn n_control_frames(&self) -> usize {
        self.harmonic.n_frames()
    }

    pub fn n_noise_frames(&self) -> usize {
        self.noise.magnitudes_raw.n_frames()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be positive"));
        }
        if self.n_samples != self.n_control_frames() * CONTROL_HOP {
            return Err(Error::config(format!(
                "n_samples {} != {} control frames * hop {}",
                self.n_samples,
                self.n_control_frames(),
                CONTROL_HOP
            )));
        }
        if self.n_samples != self.n_noise_frames() * NOISE_HOP {
            return Err(Error::config(format!(
                "n_samples {} != {} noise frames * hop {}",
                self.n_samples,
                self.n_noise_frames(),
                NOISE_HOP
            )));
        }
        if self.harmonic.amplitude_raw.n_frames() != self.n_control_frames()
            || self.harmonic.harmonic_raw.n_frames() != self.n_control_frames()
        {
            return Err(Error::config("harmonic tracks disagree on frame count"));
        }
        if self.harmonic.harmonic_raw.width != self.harmonic.n_harmonics {
            return Err(Error::config("harmonic_raw width != n_harmonics"));
        }
        if self.noise.magnitudes_raw.width != NOISE_BINS {
            return Err(Error::config("noise magnitude width != 65"));
        }
        if self.harmonic.f0.data.iter().any(|&f| !f.is_finite() || f <= 0.0) {
            return Err(Error::config("f0 track must be finite and positive"));
        }
        let finite = self.harmonic.amplitude_raw.data.iter().all(|v| v.is_finite())
            && self.harmonic.harmonic_raw.data.iter().all(|v| v.is_finite())
            && self.noise.magnitudes_raw.data.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("parameters must be finite"));
        }
        if let Some(ir) = &self.reverb {
            if ir.taps.is_empty() || ir.taps.iter().any(|t| !t.is_finite()) {
                return Err(Error::config("reverb impulse response must be non-empty and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    sample_rate: u32,
    n_samples: usize,
    #[serde(default)]
    noise_seed: u64,
    f0: Vec<f64>,
    amplitude_raw: Vec<f64>,
    /// [frame][harmonic]
    harmonic_raw: Vec<Vec<f64>>,
    /// [frame][bin]
    noise_raw: Vec<Vec<f64>>,
    /// Little-endian f64 taps, base64.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reverb_ir_b64: Option<String>,
    /// Alternative to the embedded taps: raw little-endian f64 file,
    /// relative to the parameter file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reverb_ir_path: Option<String>,
    #[serde(default)]
    reverb_trainable: bool,
}

fn taps_to_b64(taps: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(taps.len() * 8);
    for t in taps {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn taps_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::config("impulse response byte length must be a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn to_json(params: &SynthParams) -> Result<String> {
    params.validate()?;
    let k = params.harmonic.n_harmonics;
    let file = ParamsFile {
        version: PARAMS_VERSION,
        sample_rate: params.sample_rate,
        n_samples: params.n_samples,
        noise_seed: params.noise_seed,
        f0: params.harmonic.f0.data.clone(),
        amplitude_raw: params.harmonic.amplitude_raw.data.clone(),
        harmonic_raw: params.harmonic.harmonic_raw.data.chunks_exact(k).map(|r| r.to_vec()).collect(),
        noise_raw: params
            .noise
            .magnitudes_raw
            .data
            .chunks_exact(NOISE_BINS)
            .map(|r| r.to_vec())
            .collect(),
        reverb_ir_b64: params.reverb.as_ref().map(|ir| taps_to_b64(&ir.taps)),
        reverb_ir_path: None,
        reverb_trainable: params.reverb.as_ref().is_some_and(|ir| ir.trainable),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::config(format!("serialize: {e}")))
}

/// Parse parameters from JSON text. `base_dir` resolves a relative
/// `reverb_ir_path` when the taps are not embedded.
pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<SynthParams> {
    let file: ParamsFile =
        serde_json::from_str(text).map_err(|e| Error::config(format!("parameter file: {e}")))?;
    if file.version != PARAMS_VERSION {
        return Err(Error::config(format!(
            "unsupported parameter file version {} (expected {PARAMS_VERSION})",
            file.version
        )));
    }
    let n_frames = file.f0.len();
    if n_frames == 0 {
        return Err(Error::config("parameter file has no frames"));
    }
    if file.amplitude_raw.len() != n_frames || file.harmonic_raw.len() != n_frames {
        return Err(Error::config("parameter tracks disagree on frame count"));
    }
    let k = file.harmonic_raw[0].len();
    if k == 0 || file.harmonic_raw.iter().any(|r| r.len() != k) {
        return Err(Error::config("harmonic_raw rows must share a nonzero width"));
    }
    if file.noise_raw.is_empty() || file.noise_raw.iter().any(|r| r.len() != NOISE_BINS) {
        return Err(Error::config(format!("noise_raw rows must have width {NOISE_BINS}")));
    }
    let reverb = match (&file.reverb_ir_b64, &file.reverb_ir_path) {
        (Some(b64), _) => {
            let bytes = BASE64
                .decode(b64)
                .map_err(|e| Error::config(format!("reverb_ir_b64: {e}")))?;
            Some(taps_from_bytes(&bytes)?)
        }
        (None, Some(path)) => {
            let full = match base_dir {
                Some(dir) => dir.join(path),
                None => Path::new(path).to_path_buf(),
            };
            Some(taps_from_bytes(&std::fs::read(full)?)?)
        }
        (None, None) => None,
    };
    let params = SynthParams {
        sample_rate: file.sample_rate,
        n_samples: file.n_samples,
        noise_seed: file.noise_seed,
        harmonic: HarmonicParams {
            f0: ControlSeries::scalar(file.f0, CONTROL_HOP)?,
            amplitude_raw: ControlSeries::scalar(file.amplitude_raw, CONTROL_HOP)?,
            harmonic_raw: ControlSeries::new(
                file.harmonic_raw.into_iter().flatten().collect(),
                k,
                CONTROL_HOP,
            )?,
            n_harmonics: k,
        },
        noise: NoiseParams {
            magnitudes_raw: ControlSeries::new(
                file.noise_raw.into_iter().flatten().collect(),
                NOISE_BINS,
                NOISE_HOP,
            )?,
        },
        reverb: reverb
            .map(|taps| {
                let mut ir = ImpulseResponse::new(taps)?;
                ir.trainable = file.reverb_trainable;
                Ok::<_, Error>(ir)
            })
            .transpose()?,
    };
    params.validate()?;
    Ok(params)
}

pub fn save(params: &SynthParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SynthParams> {
    let text = std::fs::read_to_string(path)?;
    from_json(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> SynthParams {
        let mut p = SynthParams::neutral(16000, 1024, 220.0).unwrap();
        for (i, v) in p.harmonic.amplitude_raw.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.7).sin() * 2.5;
        }
        for (i, v) in p.harmonic.harmonic_raw.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.13).cos();
        }
        for (i, v) in p.noise.magnitudes_raw.data.iter_mut().enumerate() {
            *v = -1.0 + i as f64 * 1e-3;
        }
        p.noise_seed = 42;
        p
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut p = sample_params();
        p.reverb = Some(ImpulseResponse::new(vec![1.0, 0.125, -0.25, 1e-300]).unwrap());
        let text = to_json(&p).unwrap();
        let q = from_json(&text, None).unwrap();
        assert_eq!(p.harmonic.f0.data, q.harmonic.f0.data);
        assert_eq!(p.harmonic.amplitude_raw.data, q.harmonic.amplitude_raw.data);
        assert_eq!(p.harmonic.harmonic_raw.data, q.harmonic.harmonic_raw.data);
        assert_eq!(p.noise.magnitudes_raw.data, q.noise.magnitudes_raw.data);
        assert_eq!(p.reverb.as_ref().unwrap().taps, q.reverb.as_ref().unwrap().taps);
        assert_eq!(p.noise_seed, q.noise_seed);
        // a second round trip produces identical text
        assert_eq!(text, to_json(&q).unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let p = sample_params();
        save(&p, &path).unwrap();
        let q = load(&path).unwrap();
        assert_eq!(p.harmonic.amplitude_raw.data, q.harmonic.amplitude_raw.data);
    }

    #[test]
    fn reverb_path_variant_loads() {
        let dir = tempfile::tempdir().unwrap();
        let taps = [0.5f64, -0.25, 0.125];
        let bytes: Vec<u8> = taps.iter().flat_map(|t| t.to_le_bytes()).collect();
        std::fs::write(dir.path().join("ir.f64"), &bytes).unwrap();
        let p = sample_params();
        let mut text = to_json(&p).unwrap();
        text = text.replace("\"noise_seed\": 42,", "\"noise_seed\": 42, \"reverb_ir_path\": \"ir.f64\",");
        let q = from_json(&text, Some(dir.path())).unwrap();
        assert_eq!(q.reverb.unwrap().taps, taps);
    }

    #[test]
    fn rejects_bad_version() {
        let text = to_json(&sample_params()).unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(from_json(&text, None).is_err());
    }

    #[test]
    fn rejects_inconsistent_frames() {
        let mut p = sample_params();
        p.n_samples = 2048;
        assert!(to_json(&p).is_err());
    }

    #[test]
    fn rejects_malformed_json() {
        assert!(from_json("{not json", None).is_err());
    }

    #[test]
    fn neutral_requires_hop_multiple() {
        assert!(SynthParams::neutral(16000, 1000, 220.0).is_err());
        assert!(SynthParams::neutral(16000, 0, 220.0).is_err());
    }
}
