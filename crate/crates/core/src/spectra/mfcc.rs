use std::f64::consts::PI;

use super::{Matrix, SpectraError, Spectrogram, SpectrogramKind, N_BANDS};

/// Cepstral coefficients kept per frame; the deltas fill the other half.
pub const N_DCT: usize = 64;

/// First `n_out` rows of the orthonormal DCT-II of size `n_in`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Matrix {
    let n = n_in as f64;
    Matrix::from_fn(n_out, n_in, |k, i| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
    })
}

/// `[64 DCT rows; 64 delta rows]` from a log-mel spectrogram.
pub fn mfcc(logmel: &Spectrogram) -> Result<Spectrogram, SpectraError> {
    if logmel.kind != SpectrogramKind::LogMel {
        return Err(SpectraError::Kind(format!("mfcc needs a logmel input, got {}", logmel.kind)));
    }
    let dct = dct_matrix(N_DCT, N_BANDS)
        .matmul(&logmel.data)
        .ok_or_else(|| SpectraError::Shape("logmel must have 128 rows".into()))?;
    let t_len = dct.cols();
    let mut out = Matrix::zeros(2 * N_DCT, t_len);
    for k in 0..N_DCT {
        let row = dct.row(k);
        for t in 0..t_len {
            out.set(k, t, row[t]);
            let prev = row[t.saturating_sub(1)];
            let next = row[(t + 1).min(t_len - 1)];
            out.set(N_DCT + k, t, 0.5 * (prev - next));
        }
    }
    Spectrogram::new(SpectrogramKind::Mfcc, out, logmel.params, &logmel.source_id)
}
