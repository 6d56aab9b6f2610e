use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::patch::{single, Patch, PATCH};
use crate::spectra::{Matrix, N_BANDS};

/// Smallest standard deviation used when standardizing a bin.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-frequency-bin standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean 0, std 1 for every bin.
    pub fn identity() -> Self {
        NormStats {
            mean: vec![0.0; N_BANDS],
            std: vec![1.0; N_BANDS],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.mean.len() != N_BANDS || self.std.len() != N_BANDS {
            return Err(ModelError::Config("normalization stats need 128 entries".into()));
        }
        if !self.std.iter().all(|&s| s > 0.0 && s.is_finite()) || !self.mean.iter().all(|m| m.is_finite()) {
            return Err(ModelError::Config("normalization std must be positive and finite".into()));
        }
        Ok(())
    }

    /// `(x − mean_f)/std_f` for each frequency row.
    pub fn normalize(&self, patch: &Patch) -> Patch {
        let data = Matrix::from_fn(PATCH, PATCH, |f, t| single((patch.data.get(f, t) - self.mean[f]) / self.std[f]));
        Patch { data, ..patch.clone() }
    }

    pub fn denormalize(&self, patch: &Patch) -> Patch {
        let data = Matrix::from_fn(PATCH, PATCH, |f, t| patch.data.get(f, t) * self.std[f] + self.mean[f]);
        Patch { data, ..patch.clone() }
    }
}

/// Fits per-bin mean and population std over every frame of the given
/// `128×T` training spectrograms.
pub fn fit_stats<'a>(specs: impl IntoIterator<Item = &'a Matrix>) -> Result<NormStats, ModelError> {
    let mut sum = vec![0.0; N_BANDS];
    let mut sq = vec![0.0; N_BANDS];
    let mut n = 0usize;
    for m in specs {
        if m.rows() != N_BANDS {
            return Err(ModelError::Config(format!("spectrogram has {} rows", m.rows())));
        }
        for f in 0..N_BANDS {
            for &v in m.row(f) {
                sum[f] += v;
                sq[f] += v * v;
            }
        }
        n += m.cols();
    }
    if n == 0 {
        return Err(ModelError::Config("no frames to fit normalization stats".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}
