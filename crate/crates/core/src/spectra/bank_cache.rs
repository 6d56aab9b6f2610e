use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use super::{Matrix, SpectraError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BankKind {
    Mel,
    Gammatone,
}

/// Non-negative weights mapping linear STFT bins onto 128 bands.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    /// `n_bands × n_bins`.
    pub weights: Matrix,
    pub kind: BankKind,
    pub center_freqs: Vec<f64>,
}

impl FilterBank {
    /// Divides every row by its sum; rows must have a positive entry.
    pub(crate) fn new_normalized(
        mut weights: Matrix,
        kind: BankKind,
        center_freqs: Vec<f64>,
    ) -> Result<Self, SpectraError> {
        if !center_freqs.windows(2).all(|w| w[0] < w[1]) {
            return Err(SpectraError::Config("center frequencies must increase strictly".into()));
        }
        let cols = weights.cols();
        for r in 0..weights.rows() {
            let row = &mut weights.data_mut()[r * cols..(r + 1) * cols];
            let sum: f64 = row.iter().sum();
            if !(sum > 0.0) {
                return Err(SpectraError::Config(format!("{kind:?} band {r} has no positive weight")));
            }
            row.iter_mut().for_each(|w| *w /= sum);
        }
        Ok(FilterBank {
            weights,
            kind,
            center_freqs,
        })
    }

    /// `weights · lin` for a linear `n_bins × T` spectrogram.
    pub fn apply(&self, lin: &Matrix) -> Result<Matrix, SpectraError> {
        self.weights.matmul(lin).ok_or_else(|| {
            SpectraError::Shape(format!(
                "bank expects {} bins, spectrogram has {}",
                self.weights.cols(),
                lin.rows()
            ))
        })
    }
}

type Key = (BankKind, u32, usize, usize, u64);

fn table() -> &'static RwLock<HashMap<Key, Arc<FilterBank>>> {
    static TABLE: OnceLock<RwLock<HashMap<Key, Arc<FilterBank>>>> = OnceLock::new();
    TABLE.get_or_init(Default::default)
}

/// Returns the cached bank for these parameters, building it on first use.
pub(crate) fn cached(
    kind: BankKind,
    sample_rate: u32,
    n_fft: usize,
    n_bands: usize,
    f_min: f64,
    build: impl FnOnce() -> Result<FilterBank, SpectraError>,
) -> Result<Arc<FilterBank>, SpectraError> {
    let key = (kind, sample_rate, n_fft, n_bands, f_min.to_bits());
    if let Some(bank) = table().read().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(Arc::clone(bank));
    }
    let bank = Arc::new(build()?);
    let mut guard = table().write().unwrap_or_else(|e| e.into_inner());
    Ok(Arc::clone(guard.entry(key).or_insert(bank)))
}
