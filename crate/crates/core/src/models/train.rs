use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_tensor, label_tensor, Model, ModelError};
use crate::engine::{Adam, AdamConfig, EngineError, Graph, Mode};
use crate::patch::{mixup_batch, oversample, MixupConfig, Patch, PatchError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_lambda: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 50,
            epochs: 100,
            l2_lambda: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad(format!("batch_size {} must be even (mixup pairs patches)", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.l2_lambda >= 0.0) {
            return bad("learning_rate and l2_lambda must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return bad("adam constants out of range".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training configuration error: {0}")]
    Config(String),
    #[error("loss diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<EngineError> for TrainError {
    fn from(e: EngineError) -> Self {
        TrainError::Model(ModelError::Engine(e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-batch loss.
    pub loss: f32,
    /// Eval-mode accuracy on the (non-oversampled) training patches.
    pub train_acc: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Trains `model` on raw (unnormalized) patches.
///
/// Each epoch shuffles the oversampled set, cuts it into batches, mixes each
/// batch and takes one Adam step per batch. A trailing partial batch is
/// kept when it holds at least two patches, trimmed to an even size.
/// `on_epoch` sees every record as it is produced.
pub fn train(
    model: &mut Model,
    patches: &[Patch],
    mixup: &MixupConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>, TrainError> {
    let cfg = model.config.train.clone();
    cfg.validate()?;
    mixup.validate()?;
    if patches.len() < cfg.batch_size {
        return Err(TrainError::Config(format!(
            "{} patches cannot fill a batch of {}",
            patches.len(),
            cfg.batch_size
        )));
    }
    if let Some(p) = patches.iter().find(|p| p.n_classes() != model.config.n_classes) {
        return Err(TrainError::Config(format!(
            "patch from {} has {} classes, model has {}",
            p.file_id,
            p.n_classes(),
            model.config.n_classes
        )));
    }
    let normalized: Vec<Patch> = patches.iter().map(|p| model.config.stats.normalize(p)).collect();
    let balanced = oversample(normalized.clone(), cfg.seed)?;
    let hard: Vec<usize> = normalized.iter().map(Patch::hard_label).collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);
    let mut mix_rng = ChaCha8Rng::seed_from_u64(mixup.seed);
    let mut adam = Adam::new(cfg.adam(), &model.net.params);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..balanced.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut losses = Vec::new();
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let chunk = &chunk[..chunk.len() & !1];
            if chunk.is_empty() {
                continue;
            }
            let batch: Vec<Patch> = chunk.iter().map(|&i| balanced[i].clone()).collect();
            let batch = mixup_batch(&batch, mixup, &mut mix_rng)?;
            let mut g = Graph::new(Mode::Train);
            let x = g.input(batch_tensor(&batch));
            let pass = model.net.forward(&mut g, x, &mut dropout_rng)?;
            let loss = g.kl_l2_loss(pass.probs, &label_tensor(&batch), &pass.params, cfg.l2_lambda)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: bi,
                    loss: value,
                });
            }
            g.backward(loss)?;
            let grads: Vec<Vec<f32>> = pass
                .params
                .iter()
                .zip(&model.net.params)
                .map(|(&v, p)| g.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
                .collect();
            model.net.update_bn(&g, &pass);
            drop(g);
            adam.step(&mut model.net.params, &grads);
            losses.push(value);
        }
        let loss = losses.iter().sum::<f32>() / losses.len() as f32;
        let probs = model.net.predict(&normalized, 16)?;
        let correct = probs.iter().zip(&hard).filter(|(p, &y)| argmax(p) == y).count();
        let rec = EpochRecord {
            epoch,
            loss,
            train_acc: correct as f64 / normalized.len() as f64,
        };
        log::info!("epoch {epoch}: loss {loss:.5} train_acc {:.4}", rec.train_acc);
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(log)
}

/// CSV `epoch,loss,train_acc`.
pub fn write_epoch_log<W: Write>(w: W, records: &[EpochRecord]) -> Result<(), TrainError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r).map_err(|e| TrainError::Config(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_epoch_log<R: Read>(r: R) -> Result<Vec<EpochRecord>, TrainError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| TrainError::Config(format!("bad epoch log: {e}")))
}
