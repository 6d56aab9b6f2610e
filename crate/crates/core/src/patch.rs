//! Fixed-size spectrogram patches, class balancing and mixup.
//!
//! Patch pixels are kept at single precision (stored as `f64` holding
//! `f32` values). With inputs on that grid, mixup can emit a pair whose sum
//! reproduces the input sum exactly.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::spectra::{self, FrameParams, Matrix, SpectraError, Spectrogram, SpectrogramKind, N_BANDS};

/// Patch height and width.
pub const PATCH: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum PatchError {
    #[error("cannot balance classes: {0}")]
    Balance(String),
    #[error("bad batch: {0}")]
    Batch(String),
    #[error("bad label: {0}")]
    Label(String),
    #[error("bad patch: {0}")]
    Shape(String),
    #[error("mixup config: {0}")]
    Config(String),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// `128×128`, frequency-major.
    pub data: Matrix,
    /// Soft label on the simplex.
    pub label: Vec<f64>,
    pub file_id: String,
    pub index: usize,
}

pub(crate) fn single(v: f64) -> f64 {
    v as f32 as f64
}

pub fn one_hot(class: usize, n_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_classes];
    v[class] = 1.0;
    v
}

fn check_simplex(label: &[f64]) -> Result<(), PatchError> {
    let sum: f64 = label.iter().sum();
    if label.len() < 2 || label.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(PatchError::Label(format!("{label:?} is not a simplex vector")));
    }
    Ok(())
}

impl Patch {
    pub fn new(data: Matrix, label: Vec<f64>, file_id: impl Into<String>, index: usize) -> Result<Self, PatchError> {
        if data.rows() != PATCH || data.cols() != PATCH {
            return Err(PatchError::Shape(format!("patch must be 128×128, got {}×{}", data.rows(), data.cols())));
        }
        if !data.data().iter().all(|v| v.is_finite()) {
            return Err(PatchError::Shape("non-finite patch data".into()));
        }
        check_simplex(&label)?;
        Ok(Patch {
            data,
            label,
            file_id: file_id.into(),
            index,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.label.len()
    }

    /// Category with the largest label weight (lowest index on ties).
    pub fn hard_label(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.label.iter().enumerate() {
            if p > self.label[best] {
                best = i;
            }
        }
        best
    }
}

/// Cuts non-overlapping 128-frame patches; leftover frames are dropped and
/// clips shorter than one patch are tiled cyclically.
pub fn split_patches(spec: &Spectrogram, label: usize, n_classes: usize) -> Result<Vec<Patch>, PatchError> {
    if label >= n_classes || n_classes < 2 {
        return Err(PatchError::Label(format!("label {label} with {n_classes} classes")));
    }
    if spec.data.rows() != N_BANDS {
        return Err(PatchError::Shape(format!("spectrogram has {} rows", spec.data.rows())));
    }
    let t_len = spec.frames();
    let count = (t_len / PATCH).max(1);
    (0..count)
        .map(|p| {
            let data = Matrix::from_fn(PATCH, PATCH, |f, c| single(spec.data.get(f, (p * PATCH + c) % t_len)));
            Patch::new(data, one_hot(label, n_classes), &spec.source_id, p)
        })
        .collect()
}

/// Duplicates random members of minority classes until every class matches
/// the majority count. Originals keep their order; copies are appended.
pub fn oversample(patches: Vec<Patch>, seed: u64) -> Result<Vec<Patch>, PatchError> {
    let Some(first) = patches.first() else {
        return Err(PatchError::Balance("no patches".into()));
    };
    let c = first.n_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, p) in patches.iter().enumerate() {
        if p.n_classes() != c {
            return Err(PatchError::Label("patches disagree on the class count".into()));
        }
        by_class[p.hard_label()].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(PatchError::Balance(format!("class {empty} has no patches")));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extra = Vec::new();
    for members in &by_class {
        for _ in members.len()..target {
            let &i = members.choose(&mut rng).expect("non-empty class");
            extra.push(patches[i].clone());
        }
    }
    let mut out = patches;
    out.extend(extra);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixupConfig {
    pub enabled: bool,
    pub beta_alpha: f64,
    /// Probability of drawing the coefficient from `Uniform(0, 1)` rather
    /// than `Beta(α, α)`.
    pub uniform_share: f64,
    pub seed: u64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            enabled: true,
            beta_alpha: 0.4,
            uniform_share: 0.5,
            seed: 0,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<(), PatchError> {
        if !(self.beta_alpha > 0.0 && self.beta_alpha.is_finite()) {
            return Err(PatchError::Config(format!("beta_alpha {} must be positive", self.beta_alpha)));
        }
        if !(0.0..=1.0).contains(&self.uniform_share) {
            return Err(PatchError::Config(format!("uniform_share {} outside [0, 1]", self.uniform_share)));
        }
        Ok(())
    }

    pub fn draw_gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, PatchError> {
        self.validate()?;
        if rng.random::<f64>() < self.uniform_share {
            Ok(rng.random::<f64>())
        } else {
            let beta = Beta::new(self.beta_alpha, self.beta_alpha).map_err(|e| PatchError::Config(e.to_string()))?;
            Ok(beta.sample(rng))
        }
    }
}

/// Mixes one pair with coefficient `gamma`:
/// `X₁' = γX₁ + (1−γ)X₂`, `X₂' = (1−γ)X₁ + γX₂`, and likewise for labels.
///
/// `X₁'` is rounded to single precision and `X₂'` is its complement (see
/// [`complement`]), so `X₁' + X₂' == X₁ + X₂` in f64 and `γ = 1` returns the
/// pair unchanged.
pub fn mix_pair(a: &Patch, b: &Patch, gamma: f64) -> Result<(Patch, Patch), PatchError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(PatchError::Config(format!("mixup coefficient {gamma} outside [0, 1]")));
    }
    if a.n_classes() != b.n_classes() {
        return Err(PatchError::Batch("label lengths differ within a pair".into()));
    }
    let g1 = 1.0 - gamma;
    let mut d1 = Vec::with_capacity(PATCH * PATCH);
    let mut d2 = Vec::with_capacity(PATCH * PATCH);
    for (&x1, &x2) in a.data.data().iter().zip(b.data.data()) {
        let m1 = single(gamma * x1 + g1 * x2);
        d1.push(m1);
        d2.push(complement(x1, x2, m1));
    }
    let l1 = a.label.iter().zip(&b.label).map(|(y1, y2)| gamma * y1 + g1 * y2).collect();
    let l2 = a.label.iter().zip(&b.label).map(|(y1, y2)| g1 * y1 + gamma * y2).collect();
    let m = |d| Matrix::from_vec(PATCH, PATCH, d).expect("patch size");
    Ok((
        Patch {
            data: m(d1),
            label: l1,
            file_id: a.file_id.clone(),
            index: a.index,
        },
        Patch {
            data: m(d2),
            label: l2,
            file_id: b.file_id.clone(),
            index: b.index,
        },
    ))
}

/// A value `m2` with `m1 + m2 == x1 + x2` under f64 rounding.
///
/// `(x1 − m1) + x2` is exact whenever the operands span fewer than about 29
/// binades, and gives `x2` itself when `m1 == x1`. Wider spans fall back to
/// `s − m1` nudged by a few ulps until the rounded sum lands on `s`.
fn complement(x1: f64, x2: f64, m1: f64) -> f64 {
    let s = x1 + x2;
    let m2 = (x1 - m1) + x2;
    if m1 + m2 == s {
        return m2;
    }
    let mut m2 = s - m1;
    for _ in 0..64 {
        let got = m1 + m2;
        if got == s {
            break;
        }
        m2 = if got < s { m2.next_up() } else { m2.next_down() };
    }
    m2
}

/// Pairs `(0,1), (2,3), …` and mixes each pair with a fresh coefficient.
pub fn mixup_batch<R: Rng + ?Sized>(batch: &[Patch], cfg: &MixupConfig, rng: &mut R) -> Result<Vec<Patch>, PatchError> {
    if batch.len() % 2 != 0 {
        return Err(PatchError::Batch(format!("mixup needs an even batch, got {}", batch.len())));
    }
    if !cfg.enabled {
        return Ok(batch.to_vec());
    }
    let mut out = Vec::with_capacity(batch.len());
    for pair in batch.chunks_exact(2) {
        let gamma = cfg.draw_gamma(rng)?;
        let (p, q) = mix_pair(&pair[0], &pair[1], gamma)?;
        out.push(p);
        out.push(q);
    }
    Ok(out)
}

/// Writes a patch as a `SPEC1` file carrying its label and index.
pub fn write_patch(path: &Path, patch: &Patch, kind: SpectrogramKind, params: FrameParams) -> Result<(), PatchError> {
    let header = spectra::Spec1Header {
        kind,
        f: PATCH,
        t: PATCH,
        params,
        source_id: patch.file_id.clone(),
        label: Some(patch.label.clone()),
        index: Some(patch.index),
    };
    spectra::write_atomic(path, |w| spectra::write_spec1(w, &header, patch.data.data()))?;
    Ok(())
}

pub fn read_patch(path: &Path) -> Result<(Patch, SpectrogramKind), PatchError> {
    let (h, data) = spectra::read_spec1(std::fs::File::open(path).map_err(SpectraError::Io)?)?;
    let label = h.label.ok_or_else(|| PatchError::Label("feature file has no label".into()))?;
    let data = Matrix::from_vec(h.f, h.t, data.into_iter().map(f64::from).collect())
        .ok_or_else(|| PatchError::Shape("payload size".into()))?;
    Ok((Patch::new(data, label, h.source_id, h.index.unwrap_or(0))?, h.kind))
}
