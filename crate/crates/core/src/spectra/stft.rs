use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FrameParams, Matrix, SpectraError};
use crate::audio::AudioClip;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hamming, `0.54 − 0.46·cos(2πn/L)`.
    Hamming,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hamming => hamming(len),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

/// Periodic Hamming window of length `len`; `w[0] = 0.08`, peak at `len/2`.
pub fn hamming(len: usize) -> Vec<f64> {
    let l = len as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / l).cos())
        .collect()
}

/// Magnitude STFT with a Hamming window: `(n_fft/2 + 1) × T`.
pub fn stft(clip: &AudioClip, params: &FrameParams) -> Result<Matrix, SpectraError> {
    stft_with_window(&clip.samples, params, Window::Hamming)
}

pub fn stft_with_window(
    samples: &[f64],
    params: &FrameParams,
    window: Window,
) -> Result<Matrix, SpectraError> {
    params.validate()?;
    let frames = params.n_frames(samples.len())?;
    let bins = params.n_bins();
    let win = window.coefficients(params.window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); params.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Matrix::zeros(bins, frames);
    for t in 0..frames {
        let start = t * params.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < params.window_len {
                Complex::new(samples[start + i] * win[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (f, c) in buf[..bins].iter().enumerate() {
            out.set(f, t, c.norm());
        }
    }
    Ok(out)
}

/// Linearly interpolates the frequency axis onto 128 evenly spaced points
/// spanning the first to the last row.
pub fn rescale_freq(lin: &Matrix) -> Result<Matrix, SpectraError> {
    let rows = lin.rows();
    let n = super::N_BANDS;
    if rows < n {
        return Err(SpectraError::Shape(format!("need at least {n} rows, got {rows}")));
    }
    let step = (rows - 1) as f64 / (n - 1) as f64;
    let mut out = Matrix::zeros(n, lin.cols());
    for i in 0..n {
        let q = i as f64 * step;
        let lo = (q.floor() as usize).min(rows - 1);
        let hi = (lo + 1).min(rows - 1);
        let frac = q - lo as f64;
        let (a, b) = (lin.row(lo), lin.row(hi));
        for t in 0..lin.cols() {
            out.set(i, t, a[t] + frac * (b[t] - a[t]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn hamming_endpoints() {
        let w = hamming(1290);
        assert_eq!(w[0], 0.54 - 0.46);
        assert!((w[645] - 1.0).abs() < 1e-15);
        let peak = w.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(peak, w[645]);
    }

    #[test]
    fn zero_signal_gives_zero_matrix() {
        let p = FrameParams::default();
        let m = stft_with_window(&vec![0.0; 1290 + 2 * 256], &p, Window::Hamming).unwrap();
        assert_eq!((m.rows(), m.cols()), (1025, 3));
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_cosine_peaks_at_its_row() {
        let p = FrameParams {
            window_len: 2048,
            ..FrameParams::default()
        };
        let k = 37;
        let x: Vec<f64> = (0..4096).map(|n| (2.0 * PI * k as f64 * n as f64 / 2048.0).cos()).collect();
        let m = stft_with_window(&x, &p, Window::Rectangular).unwrap();
        for t in 0..m.cols() {
            let col = m.column(t);
            let arg = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(arg, k);
            assert!((col[k] - 1024.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rescale_constant_and_ramp() {
        let ones = Matrix::from_fn(1025, 3, |_, _| 1.0);
        assert!(rescale_freq(&ones).unwrap().data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let ramp = Matrix::from_fn(1025, 2, |r, _| r as f64);
        let out = rescale_freq(&ramp).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        assert!((out.get(127, 1) - 1024.0).abs() < 1e-9);
        assert!(rescale_freq(&Matrix::zeros(100, 2)).is_err());
    }
}
