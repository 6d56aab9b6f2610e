//! Time-frequency front-ends producing 128-band spectrograms with a shared
//! framing, so every kind yields a `128×T` matrix with the same `T`.

mod bank_cache;
mod cqt;
mod featfile;
mod gammatone;
mod matrix;
mod mel;
mod mfcc;
mod stft;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;

pub use bank_cache::{BankKind, FilterBank};
pub use cqt::{cqt, cqt_bin_response, cqt_window, CqtParams};
pub use featfile::{read_spec1, read_spec1_header, write_spec1, Spec1Header};
pub(crate) use featfile::write_atomic;
pub use gammatone::{erb, erb_rate, gam, gammatone_bank, gammatone_response, GammatoneParams};
pub use matrix::Matrix;
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz};
pub use mfcc::{dct_matrix, mfcc, N_DCT};
pub use stft::{hamming, rescale_freq, stft, stft_with_window, Window};

/// Output floor applied before every `log10`.
pub const LOG_FLOOR: f64 = 1e-10;
/// Band count shared by every spectrogram kind.
pub const N_BANDS: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum SpectraError {
    #[error("clip of {len} samples is shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("kind error: {0}")]
    Kind(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("feature file error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrogramKind {
    Stft,
    #[serde(rename = "logmel")]
    LogMel,
    Mfcc,
    Cqt,
    Gam,
}

impl SpectrogramKind {
    pub const ALL: [SpectrogramKind; 5] = [
        SpectrogramKind::Stft,
        SpectrogramKind::LogMel,
        SpectrogramKind::Mfcc,
        SpectrogramKind::Cqt,
        SpectrogramKind::Gam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpectrogramKind::Stft => "stft",
            SpectrogramKind::LogMel => "logmel",
            SpectrogramKind::Mfcc => "mfcc",
            SpectrogramKind::Cqt => "cqt",
            SpectrogramKind::Gam => "gam",
        }
    }

    /// Parses a comma-separated list; `all` expands to every kind.
    pub fn parse_list(s: &str) -> Result<Vec<SpectrogramKind>, SpectraError> {
        let mut kinds = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if tok.eq_ignore_ascii_case("all") {
                kinds.extend(Self::ALL);
            } else {
                kinds.push(tok.parse()?);
            }
        }
        kinds.sort();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(SpectraError::Kind("empty kind list".into()));
        }
        Ok(kinds)
    }
}

impl fmt::Display for SpectrogramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpectrogramKind {
    type Err = SpectraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "stft" => Ok(SpectrogramKind::Stft),
            "logmel" | "mel" => Ok(SpectrogramKind::LogMel),
            "mfcc" => Ok(SpectrogramKind::Mfcc),
            "cqt" => Ok(SpectrogramKind::Cqt),
            "gam" | "gammatone" => Ok(SpectrogramKind::Gam),
            _ => Err(SpectraError::Kind(format!("unknown spectrogram kind `{s}`"))),
        }
    }
}

/// Framing shared by all front-ends (all lengths in samples).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameParams {
    pub window_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_bands: usize,
    pub f_min: f64,
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams {
            window_len: 1290,
            hop: 256,
            n_fft: 2048,
            n_bands: N_BANDS,
            f_min: 10.0,
        }
    }
}

impl FrameParams {
    pub fn validate(&self) -> Result<(), SpectraError> {
        if self.window_len == 0 || self.window_len > self.n_fft {
            return Err(SpectraError::Config(format!(
                "window_len {} must be in 1..={}",
                self.window_len, self.n_fft
            )));
        }
        if self.hop == 0 {
            return Err(SpectraError::Config("hop must be at least 1".into()));
        }
        if self.n_bands != N_BANDS {
            return Err(SpectraError::Config(format!("n_bands must be {N_BANDS}")));
        }
        if !(self.f_min >= 0.0) {
            return Err(SpectraError::Config("f_min must be non-negative".into()));
        }
        Ok(())
    }

    /// `floor((N − window_len)/hop) + 1`.
    pub fn n_frames(&self, n_samples: usize) -> Result<usize, SpectraError> {
        if n_samples < self.window_len {
            return Err(SpectraError::TooShort {
                len: n_samples,
                window: self.window_len,
            });
        }
        Ok((n_samples - self.window_len) / self.hop + 1)
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub kind: SpectrogramKind,
    /// `F×T`, frequency-major.
    pub data: Matrix,
    pub params: FrameParams,
    pub source_id: String,
}

impl Spectrogram {
    pub fn new(
        kind: SpectrogramKind,
        data: Matrix,
        params: FrameParams,
        source_id: impl Into<String>,
    ) -> Result<Self, SpectraError> {
        if data.rows() != N_BANDS || data.cols() == 0 {
            return Err(SpectraError::Shape(format!(
                "{kind} spectrogram must be {N_BANDS}×T with T ≥ 1, got {}×{}",
                data.rows(),
                data.cols()
            )));
        }
        if !data.data().iter().all(|v| v.is_finite()) {
            return Err(SpectraError::Shape(format!("{kind} spectrogram has non-finite entries")));
        }
        Ok(Spectrogram {
            kind,
            data,
            params,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> usize {
        self.data.cols()
    }
}

/// `log10(max(x, 1e-10))` element-wise.
pub(crate) fn log_floor(m: &mut Matrix) {
    for v in m.data_mut() {
        *v = v.max(LOG_FLOOR).log10();
    }
}

/// Computes one spectrogram kind for a clip.
pub fn extract(
    clip: &AudioClip,
    kind: SpectrogramKind,
    params: &FrameParams,
) -> Result<Spectrogram, SpectraError> {
    params.validate()?;
    let frames = params.n_frames(clip.samples.len())?;
    let spec = match kind {
        SpectrogramKind::Stft => {
            let mut data = rescale_freq(&stft(clip, params)?)?;
            log_floor(&mut data);
            Spectrogram::new(kind, data, *params, &clip.source_id)?
        }
        SpectrogramKind::LogMel => log_mel(clip, params)?,
        SpectrogramKind::Mfcc => mfcc(&log_mel(clip, params)?)?,
        SpectrogramKind::Cqt => cqt(clip, &CqtParams::with_f_min(params.f_min), params)?,
        SpectrogramKind::Gam => gam(clip, params)?,
    };
    if spec.data.rows() != N_BANDS || spec.frames() != frames {
        return Err(SpectraError::Shape(format!(
            "{kind} produced {}×{}, expected {N_BANDS}×{frames}",
            spec.data.rows(),
            spec.frames()
        )));
    }
    Ok(spec)
}
