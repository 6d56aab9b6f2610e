//! Glue between the stages: cached feature extraction, patch sets,
//! training one model per kind and file-level inference.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::audio::{read_wav, AudioError, Manifest, ManifestEntry, Split};
use crate::fusion::{evaluate, fuse_systems, kinds_label, patch_mean, EvalReport, FusionError, ProbVector, Strategy, Truth};
use crate::models::{
    fit_stats, train, Architecture, CheckpointError, EpochRecord, Model, ModelConfig, ModelError, TrainConfig,
    TrainError,
};
use crate::patch::{split_patches, MixupConfig, Patch, PatchError};
use crate::spectra::{extract, FrameParams, SpectraError, Spectrogram, SpectrogramKind};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Clip {
        path: PathBuf,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feature files laid out as `<root>/<kind>/<file_id>.spec`.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    pub root: PathBuf,
}

impl FeatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureStore { root: root.into() }
    }

    pub fn path(&self, kind: SpectrogramKind, file_id: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(format!("{file_id}.spec"))
    }

    /// Extracts the missing (or, with `force`, all) kinds for one entry,
    /// decoding the clip at most once. Returns how many files were written.
    pub fn extract_entry(
        &self,
        manifest: &Manifest,
        entry: &ManifestEntry,
        kinds: &[SpectrogramKind],
        params: &FrameParams,
        force: bool,
    ) -> Result<usize, PipelineError> {
        let id = entry.file_id();
        let todo: Vec<SpectrogramKind> = kinds
            .iter()
            .copied()
            .filter(|&k| force || !self.path(k, &id).exists())
            .collect();
        if todo.is_empty() {
            return Ok(0);
        }
        let path = manifest.resolve(entry);
        let wrap = |e: PipelineError| PipelineError::Clip {
            path: path.clone(),
            source: Box::new(e),
        };
        let clip = read_wav(&path).map_err(|e| wrap(e.into()))?;
        for &kind in &todo {
            let spec = extract(&clip, kind, params).map_err(|e| wrap(e.into()))?;
            let out = self.path(kind, &id);
            std::fs::create_dir_all(out.parent().expect("kind directory"))?;
            spec.save(&out)?;
        }
        Ok(todo.len())
    }

    /// Loads a stored feature, checking it was made with `params`.
    pub fn load(&self, kind: SpectrogramKind, file_id: &str, params: &FrameParams) -> Result<Spectrogram, PipelineError> {
        let path = self.path(kind, file_id);
        let spec = Spectrogram::load(&path)?;
        if spec.kind != kind || spec.params != *params {
            return Err(PipelineError::Config(format!(
                "{} was extracted as {} with different frame parameters; re-extract with --force",
                path.display(),
                spec.kind
            )));
        }
        Ok(spec)
    }
}

/// One manifest entry with its spectrogram and category index.
#[derive(Clone, Debug)]
pub struct LabeledSpec {
    pub entry: ManifestEntry,
    pub label: usize,
    pub spec: Spectrogram,
}

/// Spectrograms of one split, read from `store` when present there and
/// extracted from audio otherwise.
pub fn load_split(
    manifest: &Manifest,
    split: Split,
    kind: SpectrogramKind,
    params: &FrameParams,
    store: Option<&FeatureStore>,
) -> Result<Vec<LabeledSpec>, PipelineError> {
    manifest
        .split(split)
        .map(|entry| {
            let id = entry.file_id();
            let spec = match store {
                Some(s) if s.path(kind, &id).exists() => s.load(kind, &id, params)?,
                _ => {
                    let path = manifest.resolve(entry);
                    let clip = read_wav(&path).map_err(|e| PipelineError::Clip {
                        path: path.clone(),
                        source: Box::new(e.into()),
                    })?;
                    extract(&clip, kind, params)?
                }
            };
            Ok(LabeledSpec {
                label: manifest.label_index(entry),
                entry: entry.clone(),
                spec,
            })
        })
        .collect()
}

/// Every patch of every spectrogram, one-hot labelled.
pub fn patches_of(specs: &[LabeledSpec], n_classes: usize) -> Result<Vec<Patch>, PipelineError> {
    let mut out = Vec::new();
    for s in specs {
        out.extend(split_patches(&s.spec, s.label, n_classes)?);
    }
    Ok(out)
}

pub fn truth_of(specs: &[LabeledSpec]) -> Vec<Truth> {
    specs
        .iter()
        .map(|s| Truth {
            file_id: s.entry.file_id(),
            label: s.label,
            device: s.entry.device.clone(),
        })
        .collect()
}

/// Fits normalization statistics on `train_specs`, then trains a fresh model.
pub fn train_model(
    train_specs: &[LabeledSpec],
    kind: SpectrogramKind,
    architecture: Architecture,
    n_classes: usize,
    train_cfg: &TrainConfig,
    mixup: &MixupConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, Vec<EpochRecord>), PipelineError> {
    if let Some(s) = train_specs.iter().find(|s| s.spec.kind != kind) {
        return Err(PipelineError::Config(format!(
            "{} is a {} spectrogram, training a {kind} model",
            s.entry.path, s.spec.kind
        )));
    }
    let stats = fit_stats(train_specs.iter().map(|s| &s.spec.data))?;
    let mut model = Model::new(ModelConfig {
        architecture,
        n_classes,
        spectrogram_kind: kind,
        train: train_cfg.clone(),
        stats,
    })?;
    let patches = patches_of(train_specs, n_classes)?;
    let log = train(&mut model, &patches, mixup, on_epoch)?;
    Ok((model, log))
}

/// File-level posteriors: patch predictions averaged per file. Patches of
/// consecutive files share forward batches.
pub fn file_probs(model: &Model, specs: &[LabeledSpec]) -> Result<Vec<ProbVector>, PipelineError> {
    let kind = model.config.spectrogram_kind;
    let mut patches = Vec::new();
    let mut counts = Vec::with_capacity(specs.len());
    for s in specs {
        if s.spec.kind != kind {
            return Err(PipelineError::Config(format!(
                "model was trained on {kind}, features of {} are {}",
                s.entry.path, s.spec.kind
            )));
        }
        let p = split_patches(&s.spec, s.label, model.config.n_classes)?;
        counts.push(p.len());
        patches.extend(p);
    }
    let rows = model.predict(&patches)?;
    let mut start = 0;
    specs
        .iter()
        .zip(counts)
        .map(|(s, n)| {
            let file = &rows[start..start + n];
            start += n;
            Ok(patch_mean(file, &s.entry.file_id(), kind)?)
        })
        .collect()
}

/// Fraction of files whose fused argmax matches the label.
pub fn accuracy_of(probs: &[ProbVector], truth: &[Truth]) -> f64 {
    let hits = probs
        .iter()
        .zip(truth)
        .filter(|(p, t)| crate::fusion::predict(&p.probs).class == t.label)
        .count();
    hits as f64 / truth.len().max(1) as f64
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Test-split file posteriors for each model's kind.
pub fn predict_split(
    manifest: &Manifest,
    split: Split,
    models: &BTreeMap<SpectrogramKind, Model>,
    params: &FrameParams,
    store: Option<&FeatureStore>,
) -> Result<(BTreeMap<SpectrogramKind, Vec<ProbVector>>, Vec<Truth>), PipelineError> {
    let mut probs = BTreeMap::new();
    let mut truth = Vec::new();
    for (&kind, model) in models {
        if model.config.n_classes != manifest.categories.len() {
            return Err(PipelineError::Config(format!(
                "{kind} model has {} classes, manifest has {}",
                model.config.n_classes,
                manifest.categories.len()
            )));
        }
        let specs = load_split(manifest, split, kind, params, store)?;
        truth = truth_of(&specs);
        probs.insert(kind, file_probs(model, &specs)?);
    }
    Ok((probs, truth))
}

/// Fuses and scores every requested combination under every strategy.
/// Single-kind combinations are reported once, without a strategy.
pub fn evaluate_combinations(
    probs: &BTreeMap<SpectrogramKind, Vec<ProbVector>>,
    truth: &[Truth],
    categories: &[String],
    combinations: &[Vec<SpectrogramKind>],
    strategies: &[Strategy],
) -> Result<Vec<EvalReport>, PipelineError> {
    let mut reports = Vec::new();
    for combo in combinations {
        let systems = combo
            .iter()
            .map(|k| {
                probs
                    .get(k)
                    .cloned()
                    .ok_or_else(|| PipelineError::Config(format!("no {k} model for combination {}", kinds_label(combo))))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if combo.len() == 1 {
            reports.push(evaluate(&systems[0], truth, categories, None)?);
            continue;
        }
        for &s in strategies {
            let fused = fuse_systems(&systems, s)?;
            reports.push(evaluate(&fused, truth, categories, Some(s))?);
        }
    }
    Ok(reports)
}
