//! Short-time Fourier transform magnitudes and their vector-Jacobian product.
//!
//! Frames start at multiples of `hop_size` with no centre padding, so a clip
//! of `n` samples yields `1 + (n - win_size) / hop_size` frames. The window
//! occupies the first `win_size` points of each zero-padded `fft_size` frame.

use std::f64::consts::PI;

use realfft::num_complex::Complex;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Window {
    /// Periodic Hann.
    Hann,
    /// All ones; used to check bin placement.
    Rectangular,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop_size: usize,
    pub win_size: usize,
    pub window: Window,
}

impl StftConfig {
    pub fn new(fft_size: usize, hop_size: usize, win_size: usize) -> Result<Self> {
        let cfg = Self {
            fft_size,
            hop_size,
            win_size,
            window: Window::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || self.hop_size == 0 || self.win_size == 0 {
            return Err(Error::invalid("StftConfig", "sizes must be positive"));
        }
        if self.win_size > self.fft_size {
            return Err(Error::invalid(
                "StftConfig",
                format!("win_size {} exceeds fft_size {}", self.win_size, self.fft_size),
            ));
        }
        if self.hop_size > self.win_size {
            return Err(Error::invalid(
                "StftConfig",
                format!("hop_size {} exceeds win_size {}", self.hop_size, self.win_size),
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> Result<usize> {
        if len < self.win_size {
            return Err(Error::invalid(
                "stft_magnitude",
                format!("signal of {len} samples is shorter than one {}-sample window", self.win_size),
            ));
        }
        Ok(1 + (len - self.win_size) / self.hop_size)
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        match self.window {
            Window::Hann => (0..self.win_size)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.win_size as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; self.win_size],
        }
    }

    /// The three-resolution setup used at 24 kHz, rescaled for `sample_rate`.
    ///
    /// Hop and window lengths scale linearly with the rate; FFT sizes are
    /// rounded up to the next power of two.
    pub fn multi_resolution(sample_rate: u32) -> Vec<StftConfig> {
        const BASE: [(usize, usize, usize); 3] = [(1024, 120, 600), (2048, 240, 1200), (512, 50, 240)];
        let ratio = sample_rate as f64 / 24_000.0;
        BASE.iter()
            .map(|&(fft, hop, win)| {
                let scale = |v: usize| ((v as f64 * ratio).round() as usize).max(1);
                let fft = scale(fft).next_power_of_two();
                StftConfig {
                    fft_size: fft,
                    hop_size: scale(hop),
                    win_size: scale(win).min(fft),
                    window: Window::Hann,
                }
            })
            .collect()
    }
}

/// Magnitudes (`rows · frames · bins`) plus the complex spectra needed for
/// the backward pass.
pub(crate) fn forward(x: &[f64], rows: usize, time: usize, cfg: &StftConfig) -> Result<(Vec<f64>, Vec<Complex<f64>>)> {
    cfg.validate()?;
    let frames = cfg.n_frames(time)?;
    let bins = cfg.n_bins();
    let window = cfg.window_coefficients();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut mags = Vec::with_capacity(rows * frames * bins);
    let mut spectra = Vec::with_capacity(rows * frames * bins);
    for r in 0..rows {
        let row = &x[r * time..(r + 1) * time];
        for f in 0..frames {
            let seg = &row[f * cfg.hop_size..f * cfg.hop_size + cfg.win_size];
            buf.fill(0.0);
            for ((b, s), w) in buf.iter_mut().zip(seg).zip(&window) {
                *b = s * w;
            }
            fft.process_with_scratch(&mut buf, &mut spec, &mut scratch)
                .map_err(|e| Error::invalid("stft_magnitude", e.to_string()))?;
            mags.extend(spec.iter().map(|c| c.norm()));
            spectra.extend_from_slice(&spec);
        }
    }
    Ok((mags, spectra))
}

/// Gradient with respect to the signal given the gradient `grad` of the
/// magnitudes. `d|X_k|/dy_n = Re(X_k e^{+2πikn/N}) / |X_k|`, which is a
/// half-spectrum inverse DFT of `grad_k · X_k / |X_k|`. Bins with zero
/// magnitude contribute nothing.
pub(crate) fn backward(grad: &[f64], spectra: &[Complex<f64>], rows: usize, time: usize, cfg: &StftConfig) -> Vec<f64> {
    let frames = 1 + (time - cfg.win_size) / cfg.hop_size;
    let bins = cfg.n_bins();
    let n = cfg.fft_size;
    let window = cfg.window_coefficients();
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut half = ifft.make_input_vec();
    let mut out = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let mut dx = vec![0.0; rows * time];
    for r in 0..rows {
        for f in 0..frames {
            let base = (r * frames + f) * bins;
            for k in 0..bins {
                let x = spectra[base + k];
                let mag = x.norm();
                let g = if mag > 0.0 { x * (grad[base + k] / mag) } else { Complex::new(0.0, 0.0) };
                // The inverse real FFT mirrors bins 1..N/2 onto their
                // conjugates, doubling them; DC and Nyquist appear once.
                let edge = k == 0 || (n % 2 == 0 && k == n / 2);
                half[k] = if edge { Complex::new(g.re, 0.0) } else { g * 0.5 };
            }
            ifft.process_with_scratch(&mut half, &mut out, &mut scratch)
                .expect("inverse FFT buffer sizes are fixed by the plan");
            let start = r * time + f * cfg.hop_size;
            for (i, w) in window.iter().enumerate() {
                dx[start + i] += w * out[i];
            }
        }
    }
    dx
}

/// Magnitude STFT of a 1-D signal, `[n_frames, fft_size/2 + 1]`.
pub fn stft_magnitude(x: &Tensor, cfg: &StftConfig) -> Result<Tensor> {
    if x.rank() != 1 {
        return Err(Error::shape("stft_magnitude", "rank", 1, x.rank()));
    }
    let (mags, _) = forward(x.data(), 1, x.numel(), cfg)?;
    Tensor::new(vec![cfg.n_frames(x.numel())?, cfg.n_bins()], mags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(N²) DFT magnitude of one windowed frame.
    fn naive_frame(seg: &[f64], window: &[f64], n: usize) -> Vec<f64> {
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, (s, w)) in seg.iter().zip(window).enumerate() {
                    let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += s * w * ang.cos();
                    im += s * w * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn silence_has_zero_magnitude() {
        let cfg = StftConfig::new(128, 32, 64).unwrap();
        let m = stft_magnitude(&Tensor::zeros(&[512]), &cfg).unwrap();
        assert_eq!(m.shape(), &[15, 65]);
        assert!(m.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_short_signal_is_rejected() {
        let cfg = StftConfig::new(128, 32, 64).unwrap();
        assert!(stft_magnitude(&Tensor::zeros(&[63]), &cfg).is_err());
    }

    #[test]
    fn config_invariants() {
        assert!(StftConfig::new(64, 16, 128).is_err());
        assert!(StftConfig::new(64, 65, 64).is_err());
        assert!(StftConfig::new(0, 1, 1).is_err());
    }

    #[test]
    fn sine_peaks_at_its_bin() {
        let n = 64;
        for k in [1, 5, 17, 31] {
            let cfg = StftConfig::new(n, n, n).unwrap().with_window(Window::Rectangular);
            let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * (k * i) as f64 / n as f64).sin()).collect();
            let m = stft_magnitude(&Tensor::from_vec(x), &cfg).unwrap();
            let frame0 = &m.data()[..cfg.n_bins()];
            let argmax = frame0
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, k);
        }
    }

    #[test]
    fn matches_naive_dft() {
        let x = noise(1024, 7);
        for (fft, hop, win) in [(256, 64, 200), (64, 16, 64), (512, 50, 240), (255, 40, 201)] {
            let cfg = StftConfig::new(fft, hop, win).unwrap();
            let m = stft_magnitude(&Tensor::from_vec(x.clone()), &cfg).unwrap();
            let window = cfg.window_coefficients();
            let bins = cfg.n_bins();
            for f in 0..cfg.n_frames(x.len()).unwrap() {
                let reference = naive_frame(&x[f * hop..f * hop + win], &window, fft);
                for (a, b) in m.data()[f * bins..(f + 1) * bins].iter().zip(&reference) {
                    assert!((a - b).abs() < 1e-8, "fft {fft} frame {f}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn gradient_matches_central_difference() {
        let x = Tensor::from_vec(noise(200, 3));
        for cfg in [
            StftConfig::new(64, 16, 48).unwrap(),
            StftConfig::new(63, 20, 63).unwrap(),
        ] {
            let err = grad_check(
                |g, v| {
                    let m = g.stft_magnitude(v, &cfg)?;
                    let sq = g.square(m)?;
                    let s = g.sum(sq)?;
                    let n = g.frobenius_norm(m)?;
                    g.add(s, n)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn multi_resolution_scaling() {
        let at24 = StftConfig::multi_resolution(24_000);
        assert_eq!(
            at24.iter().map(|c| (c.fft_size, c.hop_size, c.win_size)).collect::<Vec<_>>(),
            vec![(1024, 120, 600), (2048, 240, 1200), (512, 50, 240)]
        );
        let at8 = StftConfig::multi_resolution(8_000);
        assert_eq!(
            at8.iter().map(|c| (c.fft_size, c.hop_size, c.win_size)).collect::<Vec<_>>(),
            vec![(512, 40, 200), (1024, 80, 400), (256, 17, 80)]
        );
        for c in at8 {
            c.validate().unwrap();
        }
    }

    #[test]
    fn homogeneous_in_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = noise(600, 5);
        let cfg = StftConfig::new(128, 40, 100).unwrap();
        let base = stft_magnitude(&Tensor::from_vec(x.clone()), &cfg).unwrap();
        for _ in 0..5 {
            let a: f64 = rng.gen_range(0.01..10.0);
            let scaled = stft_magnitude(&Tensor::from_vec(x.iter().map(|v| a * v).collect()), &cfg).unwrap();
            for (s, b) in scaled.data().iter().zip(base.data()) {
                assert!((s - a * b).abs() < 1e-9 * a.max(1.0));
            }
        }
    }
}
