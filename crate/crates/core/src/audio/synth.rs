use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{write_wav_pcm16, AudioClip, AudioError, Manifest, ManifestEntry, Split};

/// Fewest samples that still yield one full 128-frame patch.
pub const MIN_SAMPLES: usize = 1290 + 127 * 256;

const TEST_SHARE: f64 = 0.2;
const COMB_LOW: f64 = 60.0;
const COMB_HIGH: f64 = 330.0;
const BAND_LOW: f64 = 400.0;
const BAND_HIGH: f64 = 6000.0;
const HARMONICS: usize = 5;
const SNR_DB: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Per-class multipliers on `clips_per_class` (missing classes use 1).
    #[serde(default)]
    pub imbalance: Option<BTreeMap<usize, f64>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 4,
            clips_per_class: 30,
            clip_seconds: 2.2,
            sample_rate: 16_000,
            seed: 7,
            imbalance: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), AudioError> {
        if self.n_classes < 2 {
            return Err(AudioError::Config("n_classes must be at least 2".into()));
        }
        if self.clips_per_class == 0 {
            return Err(AudioError::Config("clips_per_class must be positive".into()));
        }
        if self.sample_rate == 0 || !(self.clip_seconds > 0.0) {
            return Err(AudioError::Config("sample_rate and clip_seconds must be positive".into()));
        }
        let n = self.n_samples();
        if n < MIN_SAMPLES {
            return Err(AudioError::Config(format!(
                "{} s at {} Hz gives {n} samples, need at least {MIN_SAMPLES}",
                self.clip_seconds, self.sample_rate
            )));
        }
        if let Some(m) = &self.imbalance {
            for (&c, &mult) in m {
                if c >= self.n_classes || !(mult > 0.0 && mult.is_finite()) {
                    return Err(AudioError::Config(format!("bad imbalance entry {c}: {mult}")));
                }
            }
        }
        if 2.0 * COMB_HIGH * HARMONICS as f64 >= self.sample_rate as f64 {
            return Err(AudioError::Config("sample rate too low for the tone combs".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn clips_for(&self, class: usize) -> usize {
        let mult = self.imbalance.as_ref().and_then(|m| m.get(&class)).copied().unwrap_or(1.0);
        ((self.clips_per_class as f64 * mult).round() as usize).max(1)
    }

    pub fn label(class: usize) -> String {
        format!("scene{class:02}")
    }
}

fn log_interp(lo: f64, hi: f64, c: usize, n: usize) -> f64 {
    lo * (hi / lo).powf(c as f64 / (n - 1) as f64)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// White noise band-passed to `[lo, hi]` Hz by zeroing FFT bins.
fn band_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (i, c) in buf.iter_mut().enumerate() {
        let f = i.min(n - i) as f64 * fs / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Generates one clip of `class`: tone comb + band noise + white noise at 10 dB SNR.
pub fn synth_clip(spec: &SynthSpec, class: usize, rng: &mut ChaCha8Rng, id: &str) -> AudioClip {
    let n = spec.n_samples();
    let fs = spec.sample_rate as f64;
    let f0 = log_interp(COMB_LOW, COMB_HIGH, class, spec.n_classes) * rng.random_range(0.97..1.03);
    let mut comb = vec![0.0; n];
    for h in 1..=HARMONICS {
        let phase = rng.random_range(0.0..2.0 * PI);
        let w = 2.0 * PI * f0 * h as f64 / fs;
        let amp = 1.0 / h as f64;
        for (i, v) in comb.iter_mut().enumerate() {
            *v += amp * (w * i as f64 + phase).sin();
        }
    }
    let center = log_interp(BAND_LOW, BAND_HIGH.min(0.4 * fs), class, spec.n_classes) * rng.random_range(0.95..1.05);
    let band = band_noise(rng, n, fs, center / 1.25, center * 1.25);
    let (rc, rb) = (rms(&comb), rms(&band).max(1e-12));
    let mix = rng.random_range(0.7..1.3);
    let mut signal: Vec<f64> = comb.iter().zip(&band).map(|(c, b)| c / rc + mix * b / rb).collect();
    let noise_std = rms(&signal) / 10f64.powf(SNR_DB / 20.0);
    for v in signal.iter_mut() {
        *v += noise_std * rng.sample::<f64, _>(StandardNormal);
    }
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = rng.random_range(0.3..0.9) / peak;
    signal.iter_mut().for_each(|v| *v *= gain);
    AudioClip::new(signal, spec.sample_rate, id).expect("synthetic samples are finite")
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub wav_paths: Vec<PathBuf>,
}

/// Writes the corpus WAVs and `manifest.csv` into `out_dir`.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput, AudioError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    let mut wav_paths = Vec::new();
    let mut stream = 0u64;
    for class in 0..spec.n_classes {
        let count = spec.clips_for(class);
        let mut split_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        split_rng.set_stream(u64::MAX - class as u64);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut split_rng);
        let n_test = if count < 2 { 0 } else { ((count as f64 * TEST_SHARE).round() as usize).max(1) };
        let mut is_test = vec![false; count];
        order[..n_test].iter().for_each(|&i| is_test[i] = true);

        for (i, &test) in is_test.iter().enumerate() {
            let name = format!("{}_{i:04}", SynthSpec::label(class));
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(stream);
            stream += 1;
            let clip = synth_clip(spec, class, &mut rng, &name);
            let file = format!("{name}.wav");
            let path = out_dir.join(&file);
            write_wav_pcm16(&path, &clip)?;
            wav_paths.push(path);
            entries.push(ManifestEntry {
                path: file,
                label: SynthSpec::label(class),
                device: None,
                fold: None,
                split: if test { Split::Test } else { Split::Train },
            });
        }
    }
    let manifest = Manifest::new(entries, out_dir)?;
    let manifest_path = out_dir.join("manifest.csv");
    manifest.save(&manifest_path)?;
    Ok(SynthOutput {
        manifest_path,
        manifest,
        wav_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            clips_per_class: 5,
            n_classes: 3,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let oa = synth_dataset(&small(7), a.path()).unwrap();
        let ob = synth_dataset(&small(7), b.path()).unwrap();
        for (pa, pb) in oa.wav_paths.iter().zip(&ob.wav_paths) {
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        }
        assert_eq!(
            std::fs::read(&oa.manifest_path).unwrap(),
            std::fs::read(&ob.manifest_path).unwrap()
        );
        let c = tempfile::tempdir().unwrap();
        let oc = synth_dataset(&small(8), c.path()).unwrap();
        assert_ne!(std::fs::read(&oa.wav_paths[0]).unwrap(), std::fs::read(&oc.wav_paths[0]).unwrap());
    }

    #[test]
    fn split_and_imbalance_counts() {
        let spec = SynthSpec::default();
        let per_class: Vec<usize> = (0..4).map(|c| spec.clips_for(c)).collect();
        assert_eq!(per_class, vec![30; 4]);
        let imb = SynthSpec {
            imbalance: Some(BTreeMap::from([(0, 1.0), (1, 0.5)])),
            ..SynthSpec::default()
        };
        assert_eq!(imb.clips_for(1) * 2, imb.clips_for(0));
        assert!(SynthSpec { clip_seconds: 1.0, ..SynthSpec::default() }.validate().is_err());
        assert!(SynthSpec { n_classes: 1, ..SynthSpec::default() }.validate().is_err());
    }

    #[test]
    fn clips_stay_in_range() {
        let spec = small(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clip = synth_clip(&spec, 2, &mut rng, "x");
        assert_eq!(clip.samples.len(), spec.n_samples());
        assert!(clip.samples.iter().all(|v| v.abs() <= 0.9 + 1e-12));
    }

    #[test]
    fn spec_json_uses_field_names() {
        let json = r#"{"n_classes":2,"clips_per_class":3,"clip_seconds":2.5,"sample_rate":16000,"seed":1,"imbalance":{"1":0.5}}"#;
        let s: SynthSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.clips_for(1), 2);
        assert!(serde_json::from_str::<SynthSpec>(r#"{"n_classes":2,"bogus":1}"#).is_err());
    }
}
