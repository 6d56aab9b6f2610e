use serde::{Deserialize, Serialize};

use super::bank_cache::{cached, BankKind, FilterBank};
use super::{log_floor, stft, FrameParams, Matrix, SpectraError, Spectrogram, SpectrogramKind};
use crate::audio::AudioClip;

/// Equivalent rectangular bandwidth in Hz, `24.7·(4.37e-3·f + 1)`.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37e-3 * f + 1.0)
}

/// Glasberg–Moore ERB-rate (number of ERBs below `f`).
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (4.37e-3 * f + 1.0).log10()
}

fn erb_rate_inv(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 4.37e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammatoneParams {
    pub order: u32,
    pub f_min: f64,
    pub n_bands: usize,
    pub bandwidth_scale: f64,
}

impl Default for GammatoneParams {
    fn default() -> Self {
        GammatoneParams {
            order: 4,
            f_min: 10.0,
            n_bands: super::N_BANDS,
            bandwidth_scale: 1.019,
        }
    }
}

impl GammatoneParams {
    /// Centers evenly spaced on the ERB-rate scale from `f_min` to Nyquist.
    pub fn center_freqs(&self, sample_rate: u32) -> Result<Vec<f64>, SpectraError> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < nyquist) || self.n_bands < 2 {
            return Err(SpectraError::Config(format!(
                "cannot place {} gammatone bands between {} Hz and {nyquist} Hz",
                self.n_bands, self.f_min
            )));
        }
        let (lo, hi) = (erb_rate(self.f_min), erb_rate(nyquist));
        Ok((0..self.n_bands)
            .map(|r| erb_rate_inv(lo + (hi - lo) * r as f64 / (self.n_bands - 1) as f64))
            .collect())
    }
}

/// Unnormalized magnitude response of a gammatone filter centered at `center`,
/// equal to 1 at `f = center`.
pub fn gammatone_response(f: f64, center: f64, params: &GammatoneParams) -> f64 {
    let x = (f - center) / (params.bandwidth_scale * erb(center));
    (1.0 + x * x).powf(-(params.order as f64) / 2.0)
}

pub fn gammatone_bank(
    sample_rate: u32,
    n_fft: usize,
    params: &GammatoneParams,
) -> Result<FilterBank, SpectraError> {
    let centers = params.center_freqs(sample_rate)?;
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let weights = Matrix::from_fn(params.n_bands, n_bins, |r, j| {
        gammatone_response(j as f64 * bin_hz, centers[r], params)
    });
    FilterBank::new_normalized(weights, BankKind::Gammatone, centers)
}

pub(crate) fn gam_bank(sample_rate: u32, params: &FrameParams) -> Result<std::sync::Arc<FilterBank>, SpectraError> {
    let gp = GammatoneParams {
        f_min: params.f_min,
        n_bands: params.n_bands,
        ..GammatoneParams::default()
    };
    cached(BankKind::Gammatone, sample_rate, params.n_fft, params.n_bands, params.f_min, || {
        gammatone_bank(sample_rate, params.n_fft, &gp)
    })
}

/// `log10(max(gammatone · |STFT|, 1e-10))`.
pub fn gam(clip: &AudioClip, params: &FrameParams) -> Result<Spectrogram, SpectraError> {
    let bank = gam_bank(clip.sample_rate, params)?;
    let mut data = bank.apply(&stft(clip, params)?)?;
    log_floor(&mut data);
    Spectrogram::new(SpectrogramKind::Gam, data, *params, &clip.source_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erb_values() {
        assert_eq!(erb(0.0), 24.7);
        assert!((erb(1000.0) - 132.639).abs() < 1e-9);
        assert!((erb_rate_inv(erb_rate(3000.0)) - 3000.0).abs() < 1e-9);
    }

    #[test]
    fn response_peaks_at_center() {
        let p = GammatoneParams::default();
        assert_eq!(gammatone_response(440.0, 440.0, &p), 1.0);
        assert!(gammatone_response(450.0, 440.0, &p) < 1.0);
        assert!(gammatone_response(430.0, 440.0, &p) < 1.0);
    }

    #[test]
    fn bank_shape_and_normalization() {
        let p = GammatoneParams::default();
        let bank = gammatone_bank(22_050, 2048, &p).unwrap();
        assert_eq!(bank.center_freqs.len(), 128);
        assert!((bank.center_freqs[0] - 10.0).abs() < 1e-9);
        assert!((bank.center_freqs[127] - 11_025.0).abs() < 1e-6);
        for r in 0..128 {
            let row = bank.weights.row(r);
            assert!(row.iter().all(|&w| w > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
