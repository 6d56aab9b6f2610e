//! Audio decoding, dataset manifests and the synthetic scene corpus.

mod manifest;
mod synth;
mod wav;

pub use manifest::{CategorySet, Manifest, ManifestEntry, Split};
pub use synth::{synth_dataset, SynthOutput, SynthSpec};
pub use wav::{read_wav, write_wav_pcm16};

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("unsupported format in {path}: {reason}")]
    UnsupportedFormat { path: String, reason: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("invalid synth spec: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono signal taken from one channel of a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    /// Amplitudes in `[-1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
    pub channel_taken: usize,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::InvalidClip("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(AudioError::InvalidClip(format!("sample {i} is not finite")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            source_id: source_id.into(),
            channel_taken: 0,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
