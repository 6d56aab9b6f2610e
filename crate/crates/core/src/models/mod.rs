//! The C-DNN and joint CNN + C-RNN classifiers, their training loop and
//! checkpoint format.

mod arch;
mod checkpoint;
mod stats;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use arch::{cdnn_head, cnn_blocks, crnn_blocks, dnn02_head, Block, LayerSpec, ParamInfo};
pub use checkpoint::{
    header_of, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError, CheckpointHeader,
    ENGINE_VERSION,
};
pub use stats::{fit_stats, NormStats, STD_FLOOR};
pub use train::{read_epoch_log, train, write_epoch_log, EpochRecord, TrainConfig, TrainError};

use crate::engine::{BnStats, EngineError, Graph, Mode, Tensor, Var};
use crate::patch::{Patch, PATCH};
use crate::spectra::SpectrogramKind;
use arch::{run_blocks, trace_blocks, Allocation, Cursor};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cdnn,
    Joint,
}

impl std::str::FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cdnn" | "c-dnn" => Ok(Architecture::Cdnn),
            "joint" => Ok(Architecture::Joint),
            _ => Err(ModelError::Config(format!("unknown architecture `{s}` (expected cdnn or joint)"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Cdnn => "cdnn",
            Architecture::Joint => "joint",
        })
    }
}

/// Input shape of one patch, batch axis excluded.
pub const INPUT_SHAPE: [usize; 3] = [PATCH, PATCH, 1];
/// Width of the concatenated joint-model embedding.
pub const JOINT_EMBEDDING: usize = 384;

/// Output shape after each block, as laid out in the architecture tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    /// `(block name, output shape)` per branch, in branch order.
    pub branches: Vec<Vec<(String, Vec<usize>)>>,
    /// Classifier input width followed by the head's per-block outputs.
    pub head_input: usize,
    pub head: Vec<(String, Vec<usize>)>,
}

fn expected_cnn() -> Vec<Vec<usize>> {
    vec![
        vec![64, 64, 32],
        vec![32, 32, 64],
        vec![32, 32, 128],
        vec![16, 16, 128],
        vec![16, 16, 256],
        vec![256],
    ]
}

fn expected_crnn() -> Vec<Vec<usize>> {
    vec![
        vec![64, 128, 32],
        vec![32, 128, 64],
        vec![16, 128, 128],
        vec![128, 256],
        vec![128, 256],
        vec![128],
    ]
}

/// Layer graph plus its parameters and batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Network {
    pub architecture: Architecture,
    pub n_classes: usize,
    branches: Vec<(String, Vec<Block>)>,
    head: Vec<Block>,
    pub registry: Vec<ParamInfo>,
    pub params: Vec<Tensor<f32>>,
    pub bn: Vec<BnStats<f32>>,
    trace: ShapeTrace,
}

/// Graph handles produced by one forward pass.
pub struct ForwardPass {
    pub probs: Var,
    pub params: Vec<Var>,
    /// Concatenated branch embeddings entering the classifier head.
    pub embedding: Var,
    bn_outputs: Vec<(usize, Var)>,
}

impl Network {
    /// Builds the network, checking every block's output shape against the
    /// architecture tables.
    pub fn build(architecture: Architecture, n_classes: usize, seed: u64) -> Result<Self, ModelError> {
        if n_classes < 2 {
            return Err(ModelError::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let (branches, head) = match architecture {
            Architecture::Cdnn => (vec![("cnn".to_string(), cnn_blocks())], cdnn_head(n_classes)),
            Architecture::Joint => (
                vec![("cnn".to_string(), cnn_blocks()), ("crnn".to_string(), crnn_blocks())],
                dnn02_head(n_classes),
            ),
        };
        let mut alloc = Allocation::default();
        let mut branch_traces = Vec::new();
        let mut head_input = 0;
        for (name, blocks) in &branches {
            let t = trace_blocks(blocks, &INPUT_SHAPE, name, &mut alloc)?;
            let want = if name == "cnn" { expected_cnn() } else { expected_crnn() };
            if t != want {
                return Err(ModelError::Config(format!("{name} shape trace {t:?} differs from {want:?}")));
            }
            head_input += t.last().map(|s| s.iter().product::<usize>()).unwrap_or(0);
            branch_traces.push(blocks.iter().map(|b| b.name.clone()).zip(t).collect());
        }
        let head_trace = trace_blocks(&head, &[head_input], "head", &mut alloc)?;
        let want_head = match architecture {
            Architecture::Cdnn => vec![vec![512], vec![1024], vec![n_classes]],
            Architecture::Joint => vec![vec![2048], vec![1024], vec![n_classes]],
        };
        if head_trace != want_head {
            return Err(ModelError::Config(format!("head trace {head_trace:?} differs from {want_head:?}")));
        }
        if architecture == Architecture::Joint && head_input != JOINT_EMBEDDING {
            return Err(ModelError::Config(format!("joint embedding is {head_input}, not {JOINT_EMBEDDING}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = alloc.initialize(&mut rng);
        let bn = alloc.bn_channels.iter().map(|&c| BnStats::new(c)).collect();
        let trace = ShapeTrace {
            branches: branch_traces,
            head_input,
            head: head.iter().map(|b| b.name.clone()).zip(head_trace).collect(),
        };
        Ok(Network {
            architecture,
            n_classes,
            branches,
            head,
            registry: alloc.registry,
            params,
            bn,
            trace,
        })
    }

    pub fn shape_trace(&self) -> &ShapeTrace {
        &self.trace
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.branches.iter().flat_map(|(_, b)| b).chain(&self.head)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Runs the network on `x: B×128×128×1`. Parameters become trainable
    /// leaves in train mode and constants in eval mode.
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph<f32>, x: Var, rng: &mut R) -> Result<ForwardPass, ModelError> {
        let train = g.mode() == Mode::Train;
        if !train && self.bn.iter().any(|s| s.updates == 0) {
            log::warn!("eval-mode forward with batch-norm statistics that were never updated");
        }
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| if train { g.param(p.clone()) } else { g.input(p.clone()) })
            .collect();
        let mut cur = Cursor {
            params: &params,
            bn: &self.bn,
            next_param: 0,
            next_bn: 0,
            bn_outputs: Vec::new(),
        };
        let mut outs = Vec::new();
        for (_, blocks) in &self.branches {
            outs.push(run_blocks(g, blocks, x, &mut cur, rng)?);
        }
        let embedding = if outs.len() == 1 { outs[0] } else { g.concat(&outs)? };
        let probs = run_blocks(g, &self.head, embedding, &mut cur, rng)?;
        debug_assert_eq!(cur.next_param, params.len());
        let bn_outputs = cur.bn_outputs;
        Ok(ForwardPass {
            probs,
            params,
            embedding,
            bn_outputs,
        })
    }

    /// Folds the batch moments of a train-mode pass into the running statistics.
    pub fn update_bn(&mut self, g: &Graph<f32>, pass: &ForwardPass) {
        for &(idx, v) in &pass.bn_outputs {
            if let Some((mean, var)) = g.batch_moments(v) {
                self.bn[idx].update(mean, var, crate::engine::BN_MOMENTUM as f32);
            }
        }
    }

    /// Eval-mode class probabilities for already-normalized patches.
    pub fn predict(&self, patches: &[Patch], batch: usize) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(batch.max(1)) {
            let mut g = Graph::new(Mode::Eval);
            let x = g.input(batch_tensor(chunk));
            let pass = self.forward(&mut g, x, &mut rng)?;
            let probs = g.value(pass.probs).data();
            out.extend(probs.chunks(self.n_classes).map(|r| r.iter().map(|&p| p as f64).collect()));
        }
        Ok(out)
    }
}

/// Stacks patches into a `B×128×128×1` tensor.
pub fn batch_tensor(patches: &[Patch]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(patches.len() * PATCH * PATCH);
    for p in patches {
        data.extend(p.data.data().iter().map(|&v| v as f32));
    }
    Tensor::from_vec(&[patches.len(), PATCH, PATCH, 1], data).expect("patch size")
}

/// Soft labels stacked into `B×C`.
pub fn label_tensor(patches: &[Patch]) -> Tensor<f32> {
    let c = patches.first().map_or(0, Patch::n_classes);
    let data = patches.iter().flat_map(|p| p.label.iter().map(|&v| v as f32)).collect();
    Tensor::from_vec(&[patches.len(), c], data).expect("label size")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub n_classes: usize,
    pub spectrogram_kind: SpectrogramKind,
    pub train: TrainConfig,
    pub stats: NormStats,
}

/// A trained (or trainable) classifier for one spectrogram kind.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub net: Network,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.stats.validate()?;
        let net = Network::build(config.architecture, config.n_classes, config.train.seed)?;
        Ok(Model { config, net })
    }

    /// Normalizes raw patches with the stored statistics and predicts.
    pub fn predict(&self, raw: &[Patch]) -> Result<Vec<Vec<f64>>, ModelError> {
        let normalized: Vec<Patch> = raw.iter().map(|p| self.config.stats.normalize(p)).collect();
        self.net.predict(&normalized, 16)
    }
}
