//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! Granularity is one node per frame/sample vector rather than per scalar,
//! which keeps tapes for 100k+-dimensional parameter spaces tractable.
//! Besides elementwise primitives, the tape has fused nodes for the DSP
//! operations (envelope overlap-add, bilinear upsampling, STFT magnitude,
//! frame-wise FIR filtering, convolution) whose backward rules are the
//! corresponding adjoint operators.
//!
//! A tape is confined to one thread; independent tapes may run in parallel.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fft::fft_convolve;
use crate::filters;
use crate::signal;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&[Vec<f64>], &[f64], &mut [Vec<f64>])>;

#[derive(Default)]
struct Inner {
    values: Vec<Vec<f64>>,
    backs: Vec<Option<BackFn>>,
    grads: Vec<Vec<f64>>,
}

#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, value: Vec<f64>, back: Option<BackFn>) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.backs.push(back);
        Var(inner.values.len() - 1)
    }

    /// A differentiable input node.
    pub fn leaf(&self, value: Vec<f64>) -> Var {
        self.push(value, None)
    }

    /// A non-differentiable input (gradient is still tracked but unused).
    pub fn constant(&self, value: Vec<f64>) -> Var {
        self.push(value, None)
    }

    pub fn scalar_leaf(&self, value: f64) -> Var {
        self.leaf(vec![value])
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.inner.borrow().values[v.0].clone()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let inner = self.inner.borrow();
        debug_assert_eq!(inner.values[v.0].len(), 1);
        inner.values[v.0][0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.inner.borrow().values[v.0].len()
    }

    /// Gradient accumulated on a node by `backward`. Zero before any call.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let inner = self.inner.borrow();
        inner
            .grads
            .get(v.0)
            .cloned()
            .unwrap_or_else(|| vec![0.0; inner.values[v.0].len()])
    }

    /// Reverse pass from a scalar loss. Populates the gradient of every
    /// node the loss depends on; earlier gradients are cleared, so repeated
    /// calls are idempotent.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.values[loss.0].len() != 1 {
            return Err(Error::config("backward: loss must be scalar"));
        }
        let n = inner.values.len();
        for i in inner.grads.len()..n {
            let len = inner.values[i].len();
            inner.grads.push(vec![0.0; len]);
        }
        for g in inner.grads.iter_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        inner.grads[loss.0][0] = 1.0;
        let Inner { values, backs, grads } = &mut *inner;
        // creation order is a topological order
        for i in (0..n).rev() {
            if let Some(back) = &backs[i] {
                if grads[i].iter().all(|&g| g == 0.0) {
                    continue;
                }
                let g = std::mem::take(&mut grads[i]);
                back(values, &g, grads);
                grads[i] = g;
            }
        }
        Ok(())
    }

    // ---- elementwise primitives ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.len(), y.len(), "add: shape mismatch");
            x.iter().zip(y).map(|(p, q)| p + q).collect()
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                for (slot, &gi) in grads[a.0].iter_mut().zip(g) {
                    *slot += gi;
                }
                for (slot, &gi) in grads[b.0].iter_mut().zip(g) {
                    *slot += gi;
                }
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.len(), y.len(), "sub: shape mismatch");
            x.iter().zip(y).map(|(p, q)| p - q).collect()
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                for (slot, &gi) in grads[a.0].iter_mut().zip(g) {
                    *slot += gi;
                }
                for (slot, &gi) in grads[b.0].iter_mut().zip(g) {
                    *slot -= gi;
                }
            })),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.len(), y.len(), "mul: shape mismatch");
            x.iter().zip(y).map(|(p, q)| p * q).collect()
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                for i in 0..g.len() {
                    grads[a.0][i] += g[i] * vals[b.0][i];
                    grads[b.0][i] += g[i] * vals[a.0][i];
                }
            })),
        )
    }

    pub fn mul3(&self, a: Var, b: Var, c: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let (x, y, z) = (&inner.values[a.0], &inner.values[b.0], &inner.values[c.0]);
            assert!(x.len() == y.len() && y.len() == z.len(), "mul3: shape mismatch");
            (0..x.len()).map(|i| x[i] * y[i] * z[i]).collect()
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                for i in 0..g.len() {
                    let (x, y, z) = (vals[a.0][i], vals[b.0][i], vals[c.0][i]);
                    grads[a.0][i] += g[i] * y * z;
                    grads[b.0][i] += g[i] * x * z;
                    grads[c.0][i] += g[i] * x * y;
                }
            })),
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let value: Vec<f64> = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.len(), y.len(), "div: shape mismatch");
            x.iter().zip(y).map(|(p, q)| p / q).collect()
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                for i in 0..g.len() {
                    let y = vals[b.0][i];
                    grads[a.0][i] += g[i] / y;
                    grads[b.0][i] -= g[i] * vals[a.0][i] / (y * y);
                }
            })),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = {
            let inner = self.inner.borrow();
            inner.values[a.0].iter().map(|&x| x * c).collect()
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                for (slot, &gi) in grads[a.0].iter_mut().zip(g) {
                    *slot += gi * c;
                }
            })),
        )
    }

    pub fn abs(&self, a: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            inner.values[a.0].iter().map(|x| x.abs()).collect()
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                for i in 0..g.len() {
                    let x = vals[a.0][i];
                    // subgradient 0 at the kink
                    let s = if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    grads[a.0][i] += g[i] * s;
                }
            })),
        )
    }

    /// y = sin(k * x).
    pub fn sin_scaled(&self, a: Var, k: f64) -> Var {
        let value = {
            let inner = self.inner.borrow();
            inner.values[a.0].iter().map(|&x| (k * x).sin()).collect()
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                for i in 0..g.len() {
                    grads[a.0][i] += g[i] * k * (k * vals[a.0][i]).cos();
                }
            })),
        )
    }

    /// y = ln(x + offset).
    pub fn ln_offset(&self, a: Var, offset: f64) -> Var {
        let value = {
            let inner = self.inner.borrow();
            inner.values[a.0].iter().map(|&x| (x + offset).ln()).collect()
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                for i in 0..g.len() {
                    grads[a.0][i] += g[i] / (vals[a.0][i] + offset);
                }
            })),
        )
    }

    /// The modified sigmoid: y = 2*sigmoid(x)^ln(10) + 1e-7.
    pub fn scaled_sigmoid(&self, a: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            inner.values[a.0].iter().map(|&x| crate::synth::scaled_sigmoid(x)).collect()
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                for i in 0..g.len() {
                    let x = vals[a.0][i];
                    let s = 1.0 / (1.0 + (-x).exp());
                    let dy = 2.0 * std::f64::consts::LN_10 * s.powf(std::f64::consts::LN_10) * (1.0 - s);
                    grads[a.0][i] += g[i] * dy;
                }
            })),
        )
    }

    /// Exclusive running sum: y[i] = sum_{j < i} x[j].
    pub fn cumsum_exclusive(&self, a: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.0];
            let mut out = Vec::with_capacity(x.len());
            let mut acc = 0.0;
            for &v in x {
                out.push(acc);
                acc += v;
            }
            out
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                // dL/dx[j] = sum_{i > j} g[i]
                let mut suffix = 0.0;
                for j in (0..g.len()).rev() {
                    grads[a.0][j] += suffix;
                    suffix += g[j];
                }
            })),
        )
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            vec![inner.values[a.0].iter().sum()]
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                let gi = g[0];
                for slot in grads[a.0].iter_mut() {
                    *slot += gi;
                }
            })),
        )
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.len_of(a) as f64;
        let value = {
            let inner = self.inner.borrow();
            vec![inner.values[a.0].iter().sum::<f64>() / n]
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                let gi = g[0] / n;
                for slot in grads[a.0].iter_mut() {
                    *slot += gi;
                }
            })),
        )
    }

    /// Elementwise sum of many equal-length vectors in one node.
    pub fn sum_many(&self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let value = {
            let inner = self.inner.borrow();
            let len = inner.values[vars[0].0].len();
            let mut out = vec![0.0; len];
            for v in vars {
                let x = &inner.values[v.0];
                assert_eq!(x.len(), len, "sum_many: shape mismatch");
                for (slot, &xi) in out.iter_mut().zip(x) {
                    *slot += xi;
                }
            }
            out
        };
        let vars: Vec<usize> = vars.iter().map(|v| v.0).collect();
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                for &v in &vars {
                    for (slot, &gi) in grads[v].iter_mut().zip(g) {
                        *slot += gi;
                    }
                }
            })),
        )
    }

    /// Extract column `col` from a row-major [rows][width] matrix node.
    pub fn gather_column(&self, a: Var, width: usize, col: usize) -> Var {
        assert!(col < width);
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.0];
            assert_eq!(x.len() % width, 0);
            x.chunks_exact(width).map(|row| row[col]).collect()
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                for (r, &gi) in g.iter().enumerate() {
                    grads[a.0][r * width + col] += gi;
                }
            })),
        )
    }

    /// Normalize each row of a [rows][width] matrix to sum 1. Rows whose sum
    /// is not positive map to all-zero rows with zero gradient.
    pub fn div_rowsum(&self, a: Var, width: usize) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[a.0];
            assert_eq!(x.len() % width, 0);
            let mut out = vec![0.0; x.len()];
            for (r, row) in x.chunks_exact(width).enumerate() {
                let denom: f64 = row.iter().sum();
                if denom > 0.0 {
                    for (j, &v) in row.iter().enumerate() {
                        out[r * width + j] = v / denom;
                    }
                }
            }
            out
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                let x = &vals[a.0];
                for r in 0..x.len() / width {
                    let row = &x[r * width..(r + 1) * width];
                    let denom: f64 = row.iter().sum();
                    if denom <= 0.0 {
                        continue;
                    }
                    let grow = &g[r * width..(r + 1) * width];
                    // y_j = x_j / D; dL/dx_j = (g_j - sum_i g_i y_i) / D
                    let weighted: f64 = grow
                        .iter()
                        .zip(row)
                        .map(|(&gi, &xi)| gi * xi / denom)
                        .sum();
                    for j in 0..width {
                        grads[a.0][r * width + j] += (grow[j] - weighted) / denom;
                    }
                }
            })),
        )
    }

    // ---- fused DSP nodes ----

    /// Bilinear upsampling of frame values to `n_samples` samples.
    pub fn upsample(&self, a: Var, hop: usize, n_samples: usize) -> Var {
        let (value, n_frames) = {
            let inner = self.inner.borrow();
            let frames = &inner.values[a.0];
            (
                signal::upsample_bilinear(frames, hop, n_samples).expect("consistent upsample shape"),
                frames.len(),
            )
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                let gt = signal::upsample_bilinear_transpose(g, hop, n_frames);
                for (slot, gi) in grads[a.0].iter_mut().zip(gt) {
                    *slot += gi;
                }
            })),
        )
    }

    /// Normalized Hamming overlap-add envelope of a frame track.
    pub fn ola_envelope(&self, a: Var, hop: usize) -> Var {
        let (value, n_frames) = {
            let inner = self.inner.borrow();
            let frames = &inner.values[a.0];
            (
                signal::overlap_add_envelope_normalized(frames, 2 * hop, hop).expect("valid ola shape"),
                frames.len(),
            )
        };
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                let gt = signal::overlap_add_envelope_transpose(g, n_frames, 2 * hop, hop, true);
                for (slot, gi) in grads[a.0].iter_mut().zip(gt) {
                    *slot += gi;
                }
            })),
        )
    }

    /// Frequency-sampling filter design for every frame of a flattened
    /// [frames][n_bins] magnitude node; output is flattened
    /// [frames][window_size] kernels.
    pub fn fir_bank(&self, mags: Var, n_bins: usize, window_size: usize) -> Var {
        let matrix = Arc::new(filters::fir_design_matrix(n_bins, window_size));
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.values[mags.0];
            assert_eq!(x.len() % n_bins, 0);
            let mut out = Vec::with_capacity(x.len() / n_bins * window_size);
            for row in x.chunks_exact(n_bins) {
                out.extend(filters::apply_design_matrix(&matrix, n_bins, row));
            }
            out
        };
        let back_matrix = Arc::clone(&matrix);
        self.push(
            value,
            Some(Box::new(move |_vals, g, grads| {
                for (r, grow) in g.chunks_exact(window_size).enumerate() {
                    let gm = filters::apply_design_matrix_transpose(&back_matrix, n_bins, grow);
                    for (j, gi) in gm.into_iter().enumerate() {
                        grads[mags.0][r * n_bins + j] += gi;
                    }
                }
            })),
        )
    }

    /// Frame-wise time-varying FIR filtering with overlap-added tails,
    /// trimmed to the input length. Differentiable in both the signal and
    /// the kernels.
    pub fn ltv_fir(&self, x: Var, kernels: Var, kernel_len: usize, hop: usize) -> Var {
        let value = {
            let inner = self.inner.borrow();
            filters::ltv_fir_forward(&inner.values[x.0], &inner.values[kernels.0], kernel_len, hop)
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                let (gx, gk) =
                    filters::ltv_fir_backward(&vals[x.0], &vals[kernels.0], kernel_len, hop, g);
                for (slot, gi) in grads[x.0].iter_mut().zip(gx) {
                    *slot += gi;
                }
                for (slot, gi) in grads[kernels.0].iter_mut().zip(gk) {
                    *slot += gi;
                }
            })),
        )
    }

    /// Linear convolution trimmed to the first input's length (reverb).
    pub fn conv_trim(&self, dry: Var, ir: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let d = &inner.values[dry.0];
            let full = fft_convolve(d, &inner.values[ir.0]);
            full[..d.len()].to_vec()
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                let d = &vals[dry.0];
                let taps = &vals[ir.0];
                let rev_ir: Vec<f64> = taps.iter().rev().cloned().collect();
                let corr = fft_convolve(g, &rev_ir);
                for (m, slot) in grads[dry.0].iter_mut().enumerate() {
                    *slot += corr[m + taps.len() - 1];
                }
                let rev_dry: Vec<f64> = d.iter().rev().cloned().collect();
                let corr = fft_convolve(g, &rev_dry);
                // IR taps at or beyond the trimmed length never reach the output
                for (t, slot) in grads[ir.0].iter_mut().enumerate().take(g.len()) {
                    *slot += corr[t + d.len() - 1];
                }
            })),
        )
    }

    /// Hann-windowed STFT magnitudes, flattened [frame][bin].
    pub fn stft_magnitude(&self, audio: Var, fft_size: usize, hop: usize, n_frames: usize) -> Var {
        let value = {
            let inner = self.inner.borrow();
            signal::stft_magnitude_flat(&inner.values[audio.0], fft_size, hop, n_frames)
        };
        self.push(
            value,
            Some(Box::new(move |vals, g, grads| {
                let gx = signal::stft_magnitude_backward(&vals[audio.0], g, fft_size, hop, n_frames);
                for (slot, gi) in grads[audio.0].iter_mut().zip(gx) {
                    *slot += gi;
                }
            })),
        )
    }
}
