use super::bank_cache::{cached, BankKind, FilterBank};
use super::{log_floor, stft, FrameParams, Matrix, SpectraError, Spectrogram, SpectrogramKind};
use crate::audio::AudioClip;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centers evenly spaced in mel between `f_min`
/// and Nyquist, each normalized to unit row sum.
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    f_min: f64,
) -> Result<FilterBank, SpectraError> {
    let nyquist = sample_rate as f64 / 2.0;
    let n_bins = n_fft / 2 + 1;
    if !(f_min >= 0.0 && f_min < nyquist) {
        return Err(SpectraError::Config(format!("f_min {f_min} Hz must lie below Nyquist {nyquist} Hz")));
    }
    if n_mels == 0 || n_mels > n_bins {
        return Err(SpectraError::Config(format!(
            "{n_mels} mel bands cannot be represented by {n_bins} FFT bins"
        )));
    }
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = Matrix::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for j in 0..n_bins {
            let f = j as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            if w > 0.0 {
                weights.set(m, j, w);
                any = true;
            }
        }
        // A triangle narrower than the bin spacing falls back to its nearest bin.
        if !any {
            let j = ((center / bin_hz).round() as usize).min(n_bins - 1);
            weights.set(m, j, 1.0);
        }
    }
    FilterBank::new_normalized(weights, BankKind::Mel, edges[1..=n_mels].to_vec())
}

pub(crate) fn mel_bank(sample_rate: u32, params: &FrameParams) -> Result<std::sync::Arc<FilterBank>, SpectraError> {
    cached(BankKind::Mel, sample_rate, params.n_fft, params.n_bands, params.f_min, || {
        mel_filterbank(sample_rate, params.n_fft, params.n_bands, params.f_min)
    })
}

/// `log10(max(mel · |STFT|, 1e-10))`.
pub fn log_mel(clip: &AudioClip, params: &FrameParams) -> Result<Spectrogram, SpectraError> {
    let bank = mel_bank(clip.sample_rate, params)?;
    let mut data = bank.apply(&stft(clip, params)?)?;
    log_floor(&mut data);
    Spectrogram::new(SpectrogramKind::LogMel, data, *params, &clip.source_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_formula() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn bank_rows_are_normalized() {
        for fs in [16_000, 22_050, 44_100] {
            let bank = mel_filterbank(fs, 2048, 128, 10.0).unwrap();
            assert_eq!((bank.weights.rows(), bank.weights.cols()), (128, 1025));
            for r in 0..128 {
                let row = bank.weights.row(r);
                assert!(row.iter().all(|&w| w >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!(bank.center_freqs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(mel_filterbank(16_000, 2048, 2000, 10.0).is_err());
        assert!(mel_filterbank(16_000, 2048, 128, 9000.0).is_err());
    }
}
