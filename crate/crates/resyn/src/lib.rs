//! Differentiable harmonic-plus-noise synthesis with analysis-by-synthesis
//! parameter fitting.
//!
//! The crate is organized as:
//! - [`signal`]: audio/control types, windows, STFT, envelope resampling
//! - [`fft`]: DFT/FFT and convolution primitives
//! - [`tape`]: reverse-mode autodiff over vector-valued operations
//! - [`adam`]: the ADAM optimizer
//! - [`synth`]: harmonic additive oscillator and parameter nonlinearities
//! - [`filters`]: LTV-FIR filtering, filtered noise, reverb
//! - [`loss`]: multi-scale spectral reconstruction loss
//! - [`loudness`], [`pitch`], [`metrics`]: evaluation features and metrics
//! - [`fit`]: gradient-descent parameter fitting and resynthesis ops
//! - [`params`]: parameter-file (JSON) serialization
//! - [`wav`]: PCM16 mono WAV I/O

pub mod adam;
pub mod error;
pub mod fft;
pub mod filters;
pub mod fit;
pub mod grad_check;
pub mod loss;
pub mod loudness;
pub mod metrics;
pub mod params;
pub mod pitch;
pub mod signal;
pub mod synth;
pub mod tape;
pub mod wav;

pub use error::{Error, Result};
