//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! Frames use a periodic square-root Hann window for both analysis and
//! synthesis at 50 % overlap, so the product window sums to one and the
//! round trip is exact apart from rounding. The signal is preceded by one hop
//! of zeros and followed by enough zeros to complete the last frame;
//! synthesis trims back to the original length.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::Signal;

pub const DEFAULT_FFT_SIZE: usize = 512;
pub const DEFAULT_HOP_SIZE: usize = 256;
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Complex multichannel spectrogram, `channels × frames × bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop_size: usize,
    /// Length of the time signal this was computed from.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn zeros(
        channels: usize,
        frames: usize,
        sample_rate: u32,
        fft_size: usize,
        hop_size: usize,
        signal_len: usize,
    ) -> Self {
        Spectrogram {
            data: Array3::zeros((channels, frames, fft_size / 2 + 1)),
            sample_rate,
            fft_size,
            hop_size,
            signal_len,
        }
    }

    /// Copy of the metadata with new data.
    pub fn with_data(&self, data: Array3<Complex64>) -> Self {
        Spectrogram {
            data,
            sample_rate: self.sample_rate,
            fft_size: self.fft_size,
            hop_size: self.hop_size,
            signal_len: self.signal_len,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn bins(&self) -> usize {
        self.data.dim().2
    }

    /// Center frequency of every bin in Hz.
    pub fn bin_frequencies(&self) -> Vec<f64> {
        bin_frequencies(self.fft_size, self.sample_rate)
    }

    pub fn same_shape(&self, other: &Spectrogram) -> Result<()> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram shapes {:?} and {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        Ok(())
    }
}

/// `k · fs / fftSize` for `k = 0..=fftSize/2`.
pub fn bin_frequencies(fft_size: usize, sample_rate: u32) -> Vec<f64> {
    (0..=fft_size / 2)
        .map(|k| k as f64 * sample_rate as f64 / fft_size as f64)
        .collect()
}

/// Periodic square-root Hann window.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).sqrt())
        .collect()
}

/// STFT engine with cached FFT plans.
#[derive(Clone)]
pub struct Stft {
    fft_size: usize,
    hop_size: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("fft_size", &self.fft_size)
            .field("hop_size", &self.hop_size)
            .finish()
    }
}

impl Default for Stft {
    fn default() -> Self {
        Stft::new(DEFAULT_FFT_SIZE, DEFAULT_HOP_SIZE).expect("default sizes are valid")
    }
}

impl Stft {
    pub fn new(fft_size: usize, hop_size: usize) -> Result<Self> {
        if fft_size < 2 || !fft_size.is_power_of_two() {
            return Err(Error::Domain(format!(
                "fft size {fft_size} is not a power of two"
            )));
        }
        if hop_size * 2 != fft_size {
            return Err(Error::Domain(format!(
                "hop size {hop_size} must be half the fft size {fft_size}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Stft {
            fft_size,
            hop_size,
            window: sqrt_hann(fft_size),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop_size(&self) -> usize {
        self.hop_size
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop_size) + 1
    }

    fn analyse_channel(&self, x: &[f64], frames: usize) -> Array2<Complex64> {
        let n = self.fft_size;
        let hop = self.hop_size;
        let mut out = Array2::zeros((frames, self.bins()));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                // padded position t*hop + i maps to original index t*hop + i - hop
                let pos = (t * hop + i) as isize - hop as isize;
                let v = if pos >= 0 && (pos as usize) < x.len() {
                    x[pos as usize] * self.window[i]
                } else {
                    0.0
                };
                *b = Complex64::new(v, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (dst, src) in out.row_mut(t).iter_mut().zip(&buf) {
                *dst = *src;
            }
        }
        out
    }

    pub fn forward(&self, x: &Signal) -> Result<Spectrogram> {
        let len = x.samples();
        if len < self.fft_size {
            return Err(Error::SignalTooShort {
                len,
                frame: self.fft_size,
            });
        }
        let frames = self.frame_count(len);
        let per_channel: Vec<Array2<Complex64>> = x
            .data
            .outer_iter()
            .into_par_iter()
            .map(|ch| {
                let ch = ch.to_vec();
                self.analyse_channel(&ch, frames)
            })
            .collect();
        let mut data = Array3::zeros((x.channels(), frames, self.bins()));
        for (mut dst, src) in data.outer_iter_mut().zip(per_channel) {
            dst.assign(&src);
        }
        Ok(Spectrogram {
            data,
            sample_rate: x.sample_rate,
            fft_size: self.fft_size,
            hop_size: self.hop_size,
            signal_len: len,
        })
    }

    pub fn inverse(&self, s: &Spectrogram) -> Result<Signal> {
        if s.fft_size != self.fft_size || s.hop_size != self.hop_size {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram uses fft {}/{}, engine {}/{}",
                s.fft_size, s.hop_size, self.fft_size, self.hop_size
            )));
        }
        if s.bins() != self.bins() || s.frames() < self.frame_count(s.signal_len) {
            return Err(Error::ShapeMismatch(format!(
                "{} frames x {} bins cannot cover {} samples",
                s.frames(),
                s.bins(),
                s.signal_len
            )));
        }
        let n = self.fft_size;
        let hop = self.hop_size;
        let len = s.signal_len;
        let rows: Vec<Vec<f64>> = s
            .data
            .outer_iter()
            .into_par_iter()
            .map(|ch| {
                let mut acc = vec![0.0; s.frames() * hop + n];
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
                for (t, frame) in ch.axis_iter(Axis(0)).enumerate() {
                    for k in 0..=n / 2 {
                        buf[k] = frame[k];
                    }
                    for k in 1..n / 2 {
                        buf[n - k] = frame[k].conj();
                    }
                    // a real signal has real DC and Nyquist bins
                    buf[0].im = 0.0;
                    buf[n / 2].im = 0.0;
                    self.inverse.process_with_scratch(&mut buf, &mut scratch);
                    for i in 0..n {
                        acc[t * hop + i] += buf[i].re / n as f64 * self.window[i];
                    }
                }
                acc[hop..hop + len].to_vec()
            })
            .collect();
        let mut data = Array2::zeros((s.channels(), len));
        for (mut dst, src) in data.outer_iter_mut().zip(rows) {
            for (d, v) in dst.iter_mut().zip(src) {
                *d = v;
            }
        }
        Ok(Signal::new(data, s.sample_rate))
    }
}

pub fn stft_forward(x: &Signal, fft_size: usize, hop_size: usize) -> Result<Spectrogram> {
    Stft::new(fft_size, hop_size)?.forward(x)
}

pub fn stft_inverse(s: &Spectrogram) -> Result<Signal> {
    Stft::new(s.fft_size, s.hop_size)?.inverse(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(channels: usize, len: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new(
            Array2::from_shape_fn((channels, len), |_| rng.gen_range(-1.0..1.0)),
            16000,
        )
    }

    #[test]
    fn zero_signal() {
        let s = Stft::default().forward(&Signal::zeros(2, 1000, 16000)).unwrap();
        assert!(s.data.iter().all(|z| z.norm() == 0.0));
        let back = Stft::default().inverse(&s).unwrap();
        assert!(back.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let fs = 16000.0;
        let x = Array2::from_shape_fn((1, 4096), |(_, n)| (2.0 * PI * 1000.0 * n as f64 / fs).sin());
        let s = Stft::default().forward(&Signal::new(x, 16000)).unwrap();
        let frame = s.data.index_axis(Axis(0), 0).index_axis(Axis(0), 5).to_owned();
        let peak = (0..frame.len())
            .max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm()))
            .unwrap();
        assert_eq!(peak, 32);
    }

    #[test]
    fn parseval_with_cola_window() {
        // sum_t sum_k |X|^2 / N over the full spectrum equals the signal energy,
        // since the squared analysis window sums to one across frames
        let x = random_signal(1, 3000, 4);
        let stft = Stft::default();
        let s = stft.forward(&x).unwrap();
        let n = stft.fft_size();
        let mut spec_energy = 0.0;
        for t in 0..s.frames() {
            for k in 0..s.bins() {
                let w = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                spec_energy += w * s.data[[0, t, k]].norm_sqr();
            }
        }
        spec_energy /= n as f64;
        let time_energy: f64 = x.data.iter().map(|v| v * v).sum();
        assert!((spec_energy - time_energy).abs() < 1e-9 * time_energy);
    }

    #[test]
    fn round_trip() {
        let x = random_signal(3, 5000, 9);
        let stft = Stft::default();
        let y = stft.inverse(&stft.forward(&x).unwrap()).unwrap();
        let err = (&y.data - &x.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn rejects_short_and_bad_sizes() {
        assert!(matches!(
            Stft::default().forward(&Signal::zeros(1, 100, 16000)),
            Err(Error::SignalTooShort { .. })
        ));
        assert!(Stft::new(500, 250).is_err());
        assert!(Stft::new(512, 128).is_err());
    }

    #[test]
    fn inverse_checks_metadata() {
        let s = Stft::default().forward(&Signal::zeros(1, 1024, 16000)).unwrap();
        let other = Stft::new(256, 128).unwrap();
        assert!(other.inverse(&s).is_err());
        let mut truncated = s.clone();
        truncated.data = s.data.slice(ndarray::s![.., ..2, ..]).to_owned();
        assert!(Stft::default().inverse(&truncated).is_err());
    }
}
