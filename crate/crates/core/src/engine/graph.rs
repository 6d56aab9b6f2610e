//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its forward value plus whatever it needs
//! to run backward. Inputs of a node always have smaller indices, so one
//! reverse sweep over the tape visits nodes in a valid topological order.

use super::conv::ConvCache;
use super::gru::GruCache;
use super::norm::BnCache;
use super::{EngineError, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Train mode enables dropout and batch statistics; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d(ConvCache),
    BatchNorm(BnCache<T>),
    Relu { x: Var },
    AvgPool { x: Var, ph: usize, pw: usize },
    Gap { x: Var },
    Dropout { x: Var, mask: Vec<T> },
    Dense { x: Var, w: Var, b: Var },
    Softmax { x: Var },
    BiGru(Box<GruCache<T>>),
    Concat { parts: Vec<Var> },
    Reshape { x: Var },
    MeanLast { x: Var },
    Add { a: Var, b: Var },
    KlDiv { pred: Var, target: Vec<T> },
    SumSquares { params: Vec<Var>, coeff: T },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    mode: Mode,
}

impl<T: Real> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call, if any
    /// reached this node.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&mut self, root: Var) -> Result<(), EngineError> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(EngineError::Shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(dout) = node.grad.as_deref() else {
                continue;
            };
            backward_node(&node.op, &node.value, dout, before);
        }
        Ok(())
    }
}

/// Takes (or allocates) the gradient buffer of `v`; `None` when `v` needs no gradient.
pub(crate) fn take_grad<T: Real>(nodes: &mut [Node<T>], v: Var) -> Option<Vec<T>> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(
        node.grad
            .take()
            .unwrap_or_else(|| vec![T::zero(); node.value.len()]),
    )
}

pub(crate) fn put_grad<T: Real>(nodes: &mut [Node<T>], v: Var, grad: Option<Vec<T>>) {
    if let Some(g) = grad {
        nodes[v.0].grad = Some(g);
    }
}

fn accumulate<T: Real>(nodes: &mut [Node<T>], v: Var, f: impl FnOnce(&mut [T], &[T])) {
    let Some(mut g) = take_grad(nodes, v) else {
        return;
    };
    f(&mut g, nodes[v.0].value.data());
    put_grad(nodes, v, Some(g));
}

fn backward_node<T: Real>(op: &Op<T>, out: &Tensor<T>, dout: &[T], nodes: &mut [Node<T>]) {
    match op {
        Op::Leaf => {}
        Op::Conv2d(cache) => super::conv::backward(cache, dout, nodes),
        Op::BatchNorm(cache) => super::norm::backward(cache, dout, nodes),
        Op::Relu { x } => accumulate(nodes, *x, |g, xv| {
            for ((g, &d), &xv) in g.iter_mut().zip(dout).zip(xv) {
                if xv > T::zero() {
                    *g += d;
                }
            }
        }),
        Op::AvgPool { x, ph, pw } => super::pool::avg_pool_backward(*x, *ph, *pw, dout, nodes),
        Op::Gap { x } => super::pool::gap_backward(*x, dout, nodes),
        Op::Dropout { x, mask } => accumulate(nodes, *x, |g, _| {
            for ((g, &d), &m) in g.iter_mut().zip(dout).zip(mask) {
                *g += d * m;
            }
        }),
        Op::Dense { x, w, b } => super::basic::dense_backward(*x, *w, *b, dout, nodes),
        Op::Softmax { x } => accumulate(nodes, *x, |g, _| {
            let c = *out.shape().last().unwrap_or(&1);
            for ((g, y), d) in g
                .chunks_mut(c)
                .zip(out.data().chunks(c))
                .zip(dout.chunks(c))
            {
                let dot: T = y.iter().zip(d).map(|(&y, &d)| y * d).sum();
                for ((g, &y), &d) in g.iter_mut().zip(y).zip(d) {
                    *g += y * (d - dot);
                }
            }
        }),
        Op::BiGru(cache) => super::gru::backward(cache, dout, nodes),
        Op::Concat { parts } => {
            let total = *out.shape().last().unwrap_or(&1);
            let mut offset = 0;
            for &p in parts {
                let width = *nodes[p.0].value.shape().last().unwrap_or(&1);
                accumulate(nodes, p, |g, _| {
                    for (g, d) in g.chunks_mut(width).zip(dout.chunks(total)) {
                        for (g, &d) in g.iter_mut().zip(&d[offset..offset + width]) {
                            *g += d;
                        }
                    }
                });
                offset += width;
            }
        }
        Op::Reshape { x } => accumulate(nodes, *x, |g, _| {
            for (g, &d) in g.iter_mut().zip(dout) {
                *g += d;
            }
        }),
        Op::MeanLast { x } => accumulate(nodes, *x, |g, xv| {
            let d = xv.len() / dout.len().max(1);
            let inv = T::one() / T::of(d as f64);
            for (g, &d_out) in g.chunks_mut(d).zip(dout) {
                for g in g {
                    *g += d_out * inv;
                }
            }
        }),
        Op::Add { a, b } => {
            for v in [*a, *b] {
                accumulate(nodes, v, |g, _| {
                    for (g, &d) in g.iter_mut().zip(dout) {
                        *g += d;
                    }
                });
            }
        }
        Op::KlDiv { pred, target } => super::loss::kl_backward(*pred, target, dout[0], nodes),
        Op::SumSquares { params, coeff } => {
            for &p in params {
                accumulate(nodes, p, |g, v| {
                    let k = *coeff * T::of(2.0) * dout[0];
                    for (g, &v) in g.iter_mut().zip(v) {
                        *g += k * v;
                    }
                });
            }
        }
    }
}
