use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, AudioError};

/// Decodes the first channel of a PCM16, PCM24 or float32 WAV file.
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let name = path.display().to_string();
    let decode = |reason: String| AudioError::Decode {
        path: name.clone(),
        reason,
    };
    let unsupported = |reason: String| AudioError::UnsupportedFormat {
        path: name.clone(),
        reason,
    };
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => AudioError::Io(io),
        hound::Error::Unsupported => unsupported("encoding not supported".into()),
        other => decode(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(unsupported(format!("{channels} channels")));
    }
    let declared = reader.len() as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16 | 24) => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .step_by(channels)
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| decode(e.to_string()))?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| decode(e.to_string()))?,
        (fmt, bits) => return Err(unsupported(format!("{bits}-bit {fmt:?} samples"))),
    };
    if samples.len() != declared.div_ceil(channels) {
        return Err(decode(format!(
            "data chunk declares {} frames but holds {}",
            declared / channels,
            samples.len()
        )));
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    AudioClip::new(samples, spec.sample_rate, stem).map_err(|e| decode(e.to_string()))
}

/// Writes a mono 16-bit PCM file, rounding `x·32768` and clamping.
pub fn write_wav_pcm16(path: &Path, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        other => AudioError::Decode {
            path: path.display().to_string(),
            reason: other.to_string(),
        },
    };
    let mut w = WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &clip.samples {
        let word = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(word).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}
