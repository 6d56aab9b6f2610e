use serde::{Deserialize, Serialize};

use super::graph::{put_grad, take_grad, Node, Op};
use super::{EngineError, Graph, Mode, Real, Tensor, Var};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Running per-channel statistics used by eval-mode batch normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub updates: u64,
}

impl<T: Real> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `running = momentum·running + (1 − momentum)·batch`.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], momentum: T) {
        let keep = momentum;
        let take = T::one() - momentum;
        for (r, &m) in self.mean.iter_mut().zip(batch_mean) {
            *r = keep * *r + take * m;
        }
        for (r, &v) in self.var.iter_mut().zip(batch_var) {
            *r = keep * *r + take * v;
        }
        self.updates += 1;
    }
}

pub(crate) struct BnCache<T> {
    x: Var,
    scale: Var,
    shift: Var,
    mode: Mode,
    /// Normalized input, kept only when a gradient is needed.
    xhat: Vec<T>,
    inv_std: Vec<T>,
    pub(crate) batch_mean: Vec<T>,
    pub(crate) batch_var: Vec<T>,
}

impl<T: Real> Graph<T> {
    /// Per-channel batch normalization over every axis but the last.
    ///
    /// Train mode normalizes with the batch moments (readable afterwards via
    /// [`Graph::batch_moments`]); eval mode uses `running`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running: &BnStats<T>,
    ) -> Result<Var, EngineError> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| EngineError::Shape("batch_norm on a scalar".into()))?;
        if self.shape(scale) != [c] || self.shape(shift) != [c] || running.channels() != c {
            return Err(EngineError::Shape(format!(
                "batch_norm: {c} channels but scale {:?}, shift {:?}, running {}",
                self.shape(scale),
                self.shape(shift),
                running.channels()
            )));
        }
        let xv = self.value(x).data();
        let n = xv.len() / c;
        let eps = T::of(BN_EPSILON);
        let (mean, var) = match self.mode() {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                for row in xv.chunks(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                let inv_n = T::one() / T::of(n as f64);
                mean.iter_mut().for_each(|m| *m *= inv_n);
                let mut var = vec![T::zero(); c];
                for row in xv.chunks(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s *= inv_n);
                (mean, var)
            }
            Mode::Eval => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let keep = self.requires_grad(x) || self.requires_grad(scale) || self.requires_grad(shift);
        let mut out = Vec::with_capacity(xv.len());
        let mut xhat = Vec::with_capacity(if keep { xv.len() } else { 0 });
        for row in xv.chunks(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                out.push(gamma[ch] * h + beta[ch]);
                if keep {
                    xhat.push(h);
                }
            }
        }
        let value = Tensor::from_vec(&shape, out)?;
        let mode = self.mode();
        Ok(self.push(
            value,
            Op::BatchNorm(BnCache {
                x,
                scale,
                shift,
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            }),
            &[x, scale, shift],
        ))
    }

    /// Batch mean and (biased) variance used by a train-mode batch-norm node.
    pub fn batch_moments(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm(c) if c.mode == Mode::Train => Some((&c.batch_mean, &c.batch_var)),
            _ => None,
        }
    }
}

pub(crate) fn backward<T: Real>(cache: &BnCache<T>, dout: &[T], nodes: &mut [Node<T>]) {
    let c = cache.inv_std.len();
    let mut dscale = take_grad(nodes, cache.scale);
    let mut dshift = take_grad(nodes, cache.shift);
    let mut dx = take_grad(nodes, cache.x);
    let gamma = nodes[cache.scale.0].value.data();

    let mut sum_d = vec![T::zero(); c];
    let mut sum_dxhat = vec![T::zero(); c];
    for (d_row, h_row) in dout.chunks(c).zip(cache.xhat.chunks(c)) {
        for ch in 0..c {
            sum_d[ch] += d_row[ch];
            sum_dxhat[ch] += d_row[ch] * h_row[ch];
        }
    }
    if let Some(ds) = dscale.as_mut() {
        for (d, &v) in ds.iter_mut().zip(&sum_dxhat) {
            *d += v;
        }
    }
    if let Some(db) = dshift.as_mut() {
        for (d, &v) in db.iter_mut().zip(&sum_d) {
            *d += v;
        }
    }
    if let Some(dx) = dx.as_mut() {
        match cache.mode {
            Mode::Eval => {
                for (g_row, d_row) in dx.chunks_mut(c).zip(dout.chunks(c)) {
                    for ch in 0..c {
                        g_row[ch] += d_row[ch] * gamma[ch] * cache.inv_std[ch];
                    }
                }
            }
            Mode::Train => {
                let n = T::of((dout.len() / c) as f64);
                for ((g_row, d_row), h_row) in
                    dx.chunks_mut(c).zip(dout.chunks(c)).zip(cache.xhat.chunks(c))
                {
                    for ch in 0..c {
                        // gradient through the batch mean and variance
                        let k = gamma[ch] * cache.inv_std[ch] / n;
                        g_row[ch] +=
                            k * (n * d_row[ch] - sum_d[ch] - h_row[ch] * sum_dxhat[ch]);
                    }
                }
            }
        }
    }
    put_grad(nodes, cache.scale, dscale);
    put_grad(nodes, cache.shift, dshift);
    put_grad(nodes, cache.x, dx);
}
