//! Declarative layer lists for the C-DNN, C-RNN and DNN-02 networks and the
//! interpreter that allocates parameters and runs them on a [`Graph`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::engine::{BnStats, Graph, GruParams, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    BatchNorm,
    Conv2d { kh: usize, kw: usize, filters: usize },
    Relu,
    AvgPool { ph: usize, pw: usize },
    Gap,
    Dropout { rate: f64 },
    Dense { units: usize },
    Softmax,
    /// `1×T×C` feature map to a `T×C` sequence.
    Sequence,
    BiGru { hidden: usize, dropout: f64 },
    /// Mean over the feature axis of each sequence step.
    FrameMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

fn block(name: &str, layers: Vec<LayerSpec>) -> Block {
    Block {
        name: name.to_string(),
        layers,
    }
}

use LayerSpec::*;

fn conv(k: (usize, usize), filters: usize) -> LayerSpec {
    Conv2d {
        kh: k.0,
        kw: k.1,
        filters,
    }
}

fn pool(ph: usize, pw: usize) -> LayerSpec {
    AvgPool { ph, pw }
}

fn drop(rate: f64) -> LayerSpec {
    Dropout { rate }
}

/// The six convolutional blocks shared by the C-DNN and the joint model.
pub fn cnn_blocks() -> Vec<Block> {
    vec![
        block("Vg-Cv 01", vec![BatchNorm, conv((9, 9), 32), Relu, BatchNorm, pool(2, 2), drop(0.10)]),
        block("Vg-Cv 02", vec![conv((7, 7), 64), Relu, BatchNorm, pool(2, 2), drop(0.15)]),
        block("Vg-Cv 03", vec![conv((5, 5), 128), Relu, BatchNorm, drop(0.20)]),
        block("Vg-Cv 04", vec![conv((5, 5), 128), Relu, BatchNorm, pool(2, 2), drop(0.20)]),
        block("Vg-Cv 05", vec![conv((3, 3), 256), Relu, BatchNorm, drop(0.25)]),
        block("Vg-Cv 06", vec![conv((3, 3), 256), Relu, BatchNorm, Gap, drop(0.25)]),
    ]
}

pub fn cdnn_head(n_classes: usize) -> Vec<Block> {
    vec![
        block("Vg-Fl 01", vec![Dense { units: 512 }, Relu, drop(0.30)]),
        block("Vg-Fl 02", vec![Dense { units: 1024 }, Relu, drop(0.30)]),
        block("Vg-Fl 03", vec![Dense { units: n_classes }, Softmax]),
    ]
}

pub fn crnn_blocks() -> Vec<Block> {
    vec![
        block("Re-Cv 01", vec![BatchNorm, conv((4, 1), 32), Relu, BatchNorm, pool(2, 1), drop(0.10)]),
        block("Re-Cv 02", vec![conv((4, 1), 64), Relu, BatchNorm, pool(2, 1), drop(0.15)]),
        block("Re-Cv 03", vec![conv((4, 1), 128), Relu, BatchNorm, pool(2, 1), drop(0.20)]),
        block("Re-Cv 04", vec![conv((4, 1), 256), Relu, BatchNorm, pool(16, 1), drop(0.20), Sequence]),
        block(
            "Re-Bi-GRU",
            vec![BiGru {
                hidden: 128,
                dropout: 0.30,
            }],
        ),
        block("Re-GlAv", vec![FrameMean]),
    ]
}

pub fn dnn02_head(n_classes: usize) -> Vec<Block> {
    vec![
        block("Re-Fl 01", vec![Dense { units: 2048 }, Relu, drop(0.30)]),
        block("Re-Fl 02", vec![Dense { units: 1024 }, Relu, drop(0.30)]),
        block("Re-Fl 03", vec![Dense { units: n_classes }, Softmax]),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// How a layer initializes a parameter.
#[derive(Clone, Copy, Debug)]
enum Init {
    /// `N(0, gain/fan_in)`.
    FanIn { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
}

/// Parameters and running statistics allocated while walking the layers.
#[derive(Default)]
pub(crate) struct Allocation {
    pub registry: Vec<ParamInfo>,
    inits: Vec<Init>,
    pub bn_channels: Vec<usize>,
}

impl Allocation {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.registry.push(ParamInfo { name, shape });
        self.inits.push(init);
    }

    pub fn initialize<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor<f32>> {
        self.registry
            .iter()
            .zip(&self.inits)
            .map(|(info, init)| {
                let n: usize = info.shape.iter().product();
                let data = match *init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::FanIn { fan_in, gain } => {
                        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                        (0..n).map(|_| normal.sample(rng) as f32).collect()
                    }
                };
                Tensor::from_vec(&info.shape, data).expect("registry shape")
            })
            .collect()
    }
}

fn layer_tag(l: &LayerSpec) -> &'static str {
    match l {
        BatchNorm => "bn",
        Conv2d { .. } => "conv",
        Dense { .. } => "dense",
        BiGru { .. } => "gru",
        _ => "op",
    }
}

/// Output shape of one layer (batch axis excluded), registering any
/// parameters it owns.
fn infer(layer: &LayerSpec, shape: &[usize], prefix: &str, alloc: &mut Allocation) -> Result<Vec<usize>, ModelError> {
    let bad = || ModelError::Config(format!("{prefix}: {layer:?} cannot take input {shape:?}"));
    Ok(match *layer {
        BatchNorm => {
            let c = *shape.last().ok_or_else(bad)?;
            alloc.param(format!("{prefix}.scale"), vec![c], Init::Ones);
            alloc.param(format!("{prefix}.shift"), vec![c], Init::Zeros);
            alloc.bn_channels.push(c);
            shape.to_vec()
        }
        Conv2d { kh, kw, filters } => {
            let [h, w, cin] = *shape else { return Err(bad()) };
            alloc.param(
                format!("{prefix}.kernel"),
                vec![kh, kw, cin, filters],
                Init::FanIn {
                    fan_in: kh * kw * cin,
                    gain: 2.0,
                },
            );
            alloc.param(format!("{prefix}.bias"), vec![filters], Init::Zeros);
            vec![h, w, filters]
        }
        Relu | Dropout { .. } | Softmax => shape.to_vec(),
        AvgPool { ph, pw } => {
            let [h, w, c] = *shape else { return Err(bad()) };
            if h % ph != 0 || w % pw != 0 {
                return Err(bad());
            }
            vec![h / ph, w / pw, c]
        }
        Gap => {
            let [_, _, c] = *shape else { return Err(bad()) };
            vec![c]
        }
        Dense { units } => {
            let [inp] = *shape else { return Err(bad()) };
            alloc.param(format!("{prefix}.weight"), vec![inp, units], Init::FanIn { fan_in: inp, gain: 2.0 });
            alloc.param(format!("{prefix}.bias"), vec![units], Init::Zeros);
            vec![units]
        }
        Sequence => {
            let [1, t, c] = *shape else { return Err(bad()) };
            vec![t, c]
        }
        BiGru { hidden, .. } => {
            let [t, d] = *shape else { return Err(bad()) };
            for dir in ["fwd", "bwd"] {
                let g = |fan_in| Init::FanIn { fan_in, gain: 1.0 };
                alloc.param(format!("{prefix}.{dir}.w_input"), vec![d, 3 * hidden], g(d));
                alloc.param(format!("{prefix}.{dir}.w_hidden"), vec![hidden, 3 * hidden], g(hidden));
                alloc.param(format!("{prefix}.{dir}.bias"), vec![3 * hidden], Init::Zeros);
            }
            vec![t, 2 * hidden]
        }
        FrameMean => {
            let [t, _] = *shape else { return Err(bad()) };
            vec![t]
        }
    })
}

/// Walks `blocks` from `input`, returning the output shape after each block.
pub(crate) fn trace_blocks(
    blocks: &[Block],
    input: &[usize],
    branch: &str,
    alloc: &mut Allocation,
) -> Result<Vec<Vec<usize>>, ModelError> {
    let mut shape = input.to_vec();
    let mut trace = Vec::with_capacity(blocks.len());
    for (bi, b) in blocks.iter().enumerate() {
        for (li, layer) in b.layers.iter().enumerate() {
            let prefix = format!("{branch}.b{:02}.{}{li}", bi + 1, layer_tag(layer));
            shape = infer(layer, &shape, &prefix, alloc)?;
        }
        trace.push(shape.clone());
    }
    Ok(trace)
}

/// Cursor over the parameter and statistics lists during a forward pass.
pub(crate) struct Cursor<'a> {
    pub params: &'a [Var],
    pub bn: &'a [BnStats<f32>],
    pub next_param: usize,
    pub next_bn: usize,
    /// `(running-stat index, batch-norm output)` for every batch norm run.
    pub bn_outputs: Vec<(usize, Var)>,
}

impl Cursor<'_> {
    fn take(&mut self) -> Var {
        let v = self.params[self.next_param];
        self.next_param += 1;
        v
    }
}

pub(crate) fn run_blocks<R: Rng + ?Sized>(
    g: &mut Graph<f32>,
    blocks: &[Block],
    mut x: Var,
    cur: &mut Cursor<'_>,
    rng: &mut R,
) -> Result<Var, ModelError> {
    for layer in blocks.iter().flat_map(|b| &b.layers) {
        x = match *layer {
            BatchNorm => {
                let (scale, shift) = (cur.take(), cur.take());
                let idx = cur.next_bn;
                cur.next_bn += 1;
                let y = g.batch_norm(x, scale, shift, &cur.bn[idx])?;
                cur.bn_outputs.push((idx, y));
                y
            }
            Conv2d { .. } => {
                let (k, b) = (cur.take(), cur.take());
                g.conv2d(x, k, b)?
            }
            Relu => g.relu(x),
            AvgPool { ph, pw } => g.avg_pool(x, ph, pw)?,
            Gap => g.global_avg_pool(x)?,
            Dropout { rate } => g.dropout(x, rate, rng)?,
            Dense { .. } => {
                let (w, b) = (cur.take(), cur.take());
                g.dense(x, w, b)?
            }
            Softmax => g.softmax(x),
            Sequence => {
                let s = g.shape(x).to_vec();
                g.reshape(x, &[s[0], s[2], s[3]])?
            }
            BiGru { dropout, .. } => {
                let mut p = || GruParams {
                    w_input: cur.take(),
                    w_hidden: cur.take(),
                    bias: cur.take(),
                };
                let (f, b) = (p(), p());
                let y = g.bigru(x, f, b)?;
                g.dropout(y, dropout, rng)?
            }
            FrameMean => g.mean_last(x)?,
        };
    }
    Ok(x)
}
