use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use super::{FrameParams, Matrix, SpectraError, Spectrogram, SpectrogramKind};
use crate::audio::AudioClip;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CqtParams {
    pub f_min: f64,
    pub bins_per_octave: u32,
    pub n_bins: usize,
    pub alpha: f64,
}

impl Default for CqtParams {
    fn default() -> Self {
        CqtParams {
            f_min: 10.0,
            bins_per_octave: 24,
            n_bins: super::N_BANDS,
            alpha: 0.54,
        }
    }
}

impl CqtParams {
    pub fn with_f_min(f_min: f64) -> Self {
        CqtParams {
            f_min,
            ..CqtParams::default()
        }
    }

    /// `1 / (2^(1/b) − 1)`.
    pub fn q(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    /// `f_k = 2^(k/b)·f_min`.
    pub fn freq(&self, k: usize) -> f64 {
        2f64.powf(k as f64 / self.bins_per_octave as f64) * self.f_min
    }

    /// Kernel length `Q·fs/f_k`, rounded to whole samples.
    pub fn kernel_len(&self, k: usize, sample_rate: u32) -> usize {
        ((self.q() * sample_rate as f64 / self.freq(k)).round() as usize).max(1)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), SpectraError> {
        if !(self.f_min > 0.0) || self.bins_per_octave == 0 || self.n_bins == 0 {
            return Err(SpectraError::Config("CQT needs f_min > 0 and at least one bin".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SpectraError::Config(format!("CQT alpha {} outside [0, 1]", self.alpha)));
        }
        let top = self.freq(self.n_bins - 1);
        let nyquist = sample_rate as f64 / 2.0;
        if top >= nyquist {
            return Err(SpectraError::Config(format!(
                "highest CQT bin {top:.1} Hz is not below Nyquist {nyquist} Hz"
            )));
        }
        Ok(())
    }
}

/// `α + (1−α)·cos(2πn/(len−1))`; equals 1 at both ends.
pub fn cqt_window(len: usize, alpha: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let d = (len - 1) as f64;
    (0..len)
        .map(|n| alpha + (1.0 - alpha) * (2.0 * PI * n as f64 / d).cos())
        .collect()
}

/// Precomputed `w[n]·e^{−i2πf_k n/fs}/N(k)` for every bin.
struct Kernel {
    re: Vec<f64>,
    im: Vec<f64>,
}

fn kernels(params: &CqtParams, sample_rate: u32) -> Arc<Vec<Kernel>> {
    type Key = (u32, u64, u32, usize, u64);
    static TABLE: OnceLock<RwLock<HashMap<Key, Arc<Vec<Kernel>>>>> = OnceLock::new();
    let table = TABLE.get_or_init(Default::default);
    let key = (
        sample_rate,
        params.f_min.to_bits(),
        params.bins_per_octave,
        params.n_bins,
        params.alpha.to_bits(),
    );
    if let Some(k) = table.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Arc::clone(k);
    }
    let built: Vec<Kernel> = (0..params.n_bins)
        .map(|k| {
            let n = params.kernel_len(k, sample_rate);
            let w = cqt_window(n, params.alpha);
            let omega = 2.0 * PI * params.freq(k) / sample_rate as f64;
            let inv = 1.0 / n as f64;
            let (mut re, mut im) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for (m, wm) in w.iter().enumerate() {
                let (s, c) = (omega * m as f64).sin_cos();
                re.push(wm * c * inv);
                im.push(-wm * s * inv);
            }
            Kernel { re, im }
        })
        .collect();
    let built = Arc::new(built);
    let mut guard = table.write().unwrap_or_else(|e| e.into_inner());
    Arc::clone(guard.entry(key).or_insert(built))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    acc.iter().sum::<f64>() + tail
}

/// Constant-Q magnitude spectrogram evaluated directly per bin and frame.
///
/// Column `t` is centered on sample `t·hop + window_len/2`, the center of the
/// matching STFT frame; samples outside the clip read as zero.
pub fn cqt(clip: &AudioClip, params: &CqtParams, frame: &FrameParams) -> Result<Spectrogram, SpectraError> {
    params.validate(clip.sample_rate)?;
    frame.validate()?;
    if params.n_bins != super::N_BANDS {
        return Err(SpectraError::Config(format!("CQT must have {} bins", super::N_BANDS)));
    }
    let x = &clip.samples;
    let frames = frame.n_frames(x.len())?;
    let kern = kernels(params, clip.sample_rate);
    let mut out = Matrix::zeros(params.n_bins, frames);
    for t in 0..frames {
        let center = (t * frame.hop + frame.window_len / 2) as isize;
        for (k, kn) in kern.iter().enumerate() {
            let n = kn.re.len() as isize;
            let start = center - n / 2;
            let m0 = (-start).max(0);
            let m1 = (x.len() as isize - start).min(n);
            if m1 <= m0 {
                continue;
            }
            let seg = &x[(start + m0) as usize..(start + m1) as usize];
            let (m0, m1) = (m0 as usize, m1 as usize);
            let re = dot(seg, &kn.re[m0..m1]);
            let im = dot(seg, &kn.im[m0..m1]);
            out.set(k, t, re.hypot(im));
        }
    }
    Spectrogram::new(SpectrogramKind::Cqt, out, *frame, &clip.source_id)
}

/// Magnitude response of bin `k` to a unit complex exponential at `f` Hz.
pub fn cqt_bin_response(params: &CqtParams, sample_rate: u32, k: usize, f: f64) -> f64 {
    let n = params.kernel_len(k, sample_rate);
    let w = cqt_window(n, params.alpha);
    let omega = 2.0 * PI * (f - params.freq(k)) / sample_rate as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (m, wm) in w.iter().enumerate() {
        let (s, c) = (omega * m as f64).sin_cos();
        re += wm * c;
        im += wm * s;
    }
    re.hypot(im) / n as f64
}
