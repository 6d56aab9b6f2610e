//! `ASCK1` checkpoints: magic, one JSON header line, then every registry
//! entry as little-endian `f32` in registry order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Model, ModelConfig, ModelError, NormStats, ParamInfo, TrainConfig};
use crate::engine::Tensor;
use crate::spectra::SpectrogramKind;

const MAGIC: &[u8; 5] = b"ASCK1";
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("checkpoint written by engine {found}, this is {expected}")]
    Version { found: String, expected: String },
    #[error("checkpoint blob holds {found} bytes, registry needs {expected}")]
    BlobLength { found: usize, expected: usize },
    #[error("checkpoint registry does not match the {0} architecture")]
    Registry(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub engine_version: String,
    pub architecture: Architecture,
    #[serde(rename = "C")]
    pub n_classes: usize,
    pub kind: SpectrogramKind,
    pub stats: NormStats,
    pub train: TrainConfig,
    /// Trainable parameters, then each batch norm's running mean and variance.
    pub registry: Vec<ParamInfo>,
    pub bn_updates: Vec<u64>,
}

fn full_registry(model: &Model) -> Vec<ParamInfo> {
    let mut reg = model.net.registry.clone();
    for (i, s) in model.net.bn.iter().enumerate() {
        for what in ["running_mean", "running_var"] {
            reg.push(ParamInfo {
                name: format!("bn{i:02}.{what}"),
                shape: vec![s.channels()],
            });
        }
    }
    reg
}

pub fn header_of(model: &Model) -> CheckpointHeader {
    CheckpointHeader {
        engine_version: ENGINE_VERSION.to_string(),
        architecture: model.config.architecture,
        n_classes: model.config.n_classes,
        kind: model.config.spectrogram_kind,
        stats: model.config.stats.clone(),
        train: model.config.train.clone(),
        registry: full_registry(model),
        bn_updates: model.net.bn.iter().map(|s| s.updates).collect(),
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<(), CheckpointError> {
    let header = serde_json::to_string(&header_of(model)).map_err(|e| CheckpointError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    let mut put = |vals: &[f32]| -> std::io::Result<()> {
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)
    };
    for p in &model.net.params {
        put(p.data())?;
    }
    for s in &model.net.bn {
        put(&s.mean)?;
        put(&s.var)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write_checkpoint(&mut w, model)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Model, CheckpointError> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::Format("file too short".into()))?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format("missing ASCK1 magic".into()));
    }
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&line).map_err(|e| CheckpointError::Format(format!("bad header: {e}")))?;
    if header.engine_version != ENGINE_VERSION {
        return Err(CheckpointError::Version {
            found: header.engine_version,
            expected: ENGINE_VERSION.to_string(),
        });
    }
    let mut model = Model::new(ModelConfig {
        architecture: header.architecture,
        n_classes: header.n_classes,
        spectrogram_kind: header.kind,
        train: header.train.clone(),
        stats: header.stats.clone(),
    })?;
    if full_registry(&model) != header.registry || header.bn_updates.len() != model.net.bn.len() {
        return Err(CheckpointError::Registry(header.architecture.to_string()));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    let expected: usize = header.registry.iter().map(|p| p.shape.iter().product::<usize>() * 4).sum();
    if blob.len() != expected {
        return Err(CheckpointError::BlobLength {
            found: blob.len(),
            expected,
        });
    }
    let mut floats = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };
    for p in model.net.params.iter_mut() {
        let shape = p.shape().to_vec();
        *p = Tensor::from_vec(&shape, take(p.len())).map_err(ModelError::from)?;
    }
    for (s, &updates) in model.net.bn.iter_mut().zip(&header.bn_updates) {
        let c = s.channels();
        s.mean = take(c);
        s.var = take(c);
        s.updates = updates;
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model, CheckpointError> {
    read_checkpoint(fs::File::open(path)?)
}
