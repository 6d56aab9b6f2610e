//! Multi-spectrogram acoustic scene classification: front-ends, patching,
//! a small autodiff engine, the classifier architectures and late fusion.

pub mod audio;
pub mod config;
pub mod engine;
pub mod fusion;
pub mod models;
pub mod patch;
pub mod pipeline;
pub mod spectra;

pub use audio::{AudioClip, Manifest, ManifestEntry, Split, SynthSpec};
pub use config::RunConfig;
pub use fusion::{EvalReport, ProbVector, Strategy};
pub use models::{Architecture, Model, ModelConfig, TrainConfig};
pub use patch::{MixupConfig, Patch};
pub use spectra::{FrameParams, Spectrogram, SpectrogramKind};
