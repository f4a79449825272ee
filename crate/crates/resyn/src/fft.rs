//! DFT/FFT primitives.
//!
//! Radix-2 iterative FFT for power-of-two sizes with a naive O(N^2) DFT
//! fallback for everything else. All in-band sizes (64..2048, filter DFTs,
//! reverb padding) are powers of two.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Precomputed twiddle tables for a fixed transform size.
#[derive(Clone)]
pub struct Fft {
    n: usize,
    // e^{-2*pi*i*k/n} for k < n/2; empty when n is not a power of two
    twiddles: Vec<Complex64>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "transform size must be >= 1");
        let twiddles = if n.is_power_of_two() {
            (0..n / 2)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
                .collect()
        } else {
            Vec::new()
        };
        Fft { n, twiddles }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// Inverse transform with 1/N normalization, in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.n);
        if self.n == 1 {
            return;
        }
        if !self.n.is_power_of_two() {
            let out = naive_dft(buf, inverse);
            buf.copy_from_slice(&out);
            return;
        }
        // bit-reversal permutation
        let bits = self.n.trailing_zeros();
        for i in 0..self.n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let stride = self.n / len;
            for start in (0..self.n).step_by(len) {
                for j in 0..half {
                    let mut w = self.twiddles[j * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + j];
                    let b = buf[start + j + half] * w;
                    buf[start + j] = a + b;
                    buf[start + j + half] = a - b;
                }
            }
            len *= 2;
        }
    }
}

fn naive_dft(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, &x) in input.iter().enumerate() {
                let theta = sign * 2.0 * PI * (k * m % n) as f64 / n as f64;
                acc += x * Complex64::from_polar(1.0, theta);
            }
            acc
        })
        .collect()
}

/// Standard unnormalized forward DFT of a real frame.
pub fn dft(frame: &[f64]) -> Result<Vec<Complex64>> {
    if frame.is_empty() {
        return Err(Error::config("dft: empty input"));
    }
    let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Fft::new(frame.len()).forward(&mut buf);
    Ok(buf)
}

/// Inverse DFT with 1/N normalization; `idft(dft(x)) == x`.
pub fn idft(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    if spectrum.is_empty() {
        return Err(Error::config("idft: empty input"));
    }
    let mut buf = spectrum.to_vec();
    Fft::new(spectrum.len()).inverse(&mut buf);
    Ok(buf)
}

/// Full linear convolution of two real signals via zero-padded FFT
/// multiplication. Output length is `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let fft = Fft::new(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fft.forward(&mut fa);
    fft.forward(&mut fb);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= *y;
    }
    fft.inverse(&mut fa);
    fa[..out_len].iter().map(|c| c.re).collect()
}

/// Direct O(N*M) convolution, kept as the oracle for the FFT path.
pub fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let spec = dft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for bin in spec {
            assert!((bin - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_is_dc_only() {
        let spec = dft(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((spec[0] - Complex64::new(4.0, 0.0)).norm() < 1e-12);
        for bin in &spec[1..] {
            assert!(bin.norm() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_summation_oracle() {
        let mut r = rng();
        let x: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let fast = dft(&x).unwrap();
        // independent direct-summation oracle
        let n = x.len();
        for (k, bin) in fast.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, &v) in x.iter().enumerate() {
                let theta = -2.0 * PI * (k * m) as f64 / n as f64;
                acc += Complex64::new(v * theta.cos(), v * theta.sin());
            }
            assert!((bin - acc).norm() < 1e-12, "bin {k}");
        }
    }

    #[test]
    fn empty_input_errors() {
        assert!(dft(&[]).is_err());
        assert!(idft(&[]).is_err());
    }

    #[test]
    fn roundtrip_identity() {
        let mut r = rng();
        for &n in &[1usize, 2, 3, 16, 100, 1024, 4096] {
            let x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let back = idft(&dft(&x).unwrap()).unwrap();
            let scale: f64 = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (orig, rec) in x.iter().zip(back.iter()) {
                assert!((orig - rec.re).abs() / scale < 1e-12);
                assert!(rec.im.abs() / scale < 1e-11);
            }
        }
    }

    #[test]
    fn parseval() {
        let mut r = rng();
        let n = 512;
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let spec = dft(&x).unwrap();
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        let freq_energy: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        assert!((time_energy - freq_energy).abs() / time_energy < 1e-9);
    }

    #[test]
    fn fft_convolve_matches_direct() {
        let mut r = rng();
        for &(na, nb) in &[(1024usize, 257usize), (100, 100), (4096, 4096), (1, 5)] {
            let a: Vec<f64> = (0..na).map(|_| r.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..nb).map(|_| r.gen_range(-1.0..1.0)).collect();
            let fast = fft_convolve(&a, &b);
            let slow = direct_convolve(&a, &b);
            assert_eq!(fast.len(), slow.len());
            for (f, s) in fast.iter().zip(slow.iter()) {
                assert!((f - s).abs() < 1e-9);
            }
        }
    }
}
