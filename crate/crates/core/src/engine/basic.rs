use rand::Rng;

use super::graph::{put_grad, take_grad, Node, Op};
use super::{EngineError, Graph, Mode, Real, Tensor, Var};

impl<T: Real> Graph<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let data = value.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::from_vec(value.shape(), data).expect("same shape");
        self.push(value, Op::Relu { x }, &[x])
    }

    /// Inverted dropout: survivors are scaled by `1/(1 − rate)` in train
    /// mode; eval mode returns `x` untouched.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var, EngineError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(EngineError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode() == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let value = self.value(x);
        let mask: Vec<T> = (0..value.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = value.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(value.shape(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    /// Fully connected layer over the last axis: `[.., In]·W[In, Out] + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, EngineError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let inp = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[0] != inp || self.shape(b) != [ws[1]] {
            return Err(EngineError::Shape(format!(
                "dense: input {xs:?}, weight {ws:?}, bias {:?}",
                self.shape(b)
            )));
        }
        let out_dim = ws[1];
        let rows = self.value(x).len() / inp.max(1);
        let mut out = Vec::with_capacity(rows * out_dim);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        T::gemm(
            rows,
            inp,
            out_dim,
            T::one(),
            self.value(x).data(),
            inp,
            1,
            self.value(w).data(),
            out_dim,
            1,
            T::one(),
            &mut out,
            out_dim,
            1,
        );
        let mut shape = xs;
        *shape.last_mut().expect("non-scalar") = out_dim;
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(value, Op::Dense { x, w, b }, &[x, w, b]))
    }

    /// Max-shifted softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let c = *value.shape().last().unwrap_or(&1);
        let mut data = Vec::with_capacity(value.len());
        for row in value.data().chunks(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = data.len();
            data.extend(row.iter().map(|&v| (v - max).exp()));
            let sum: T = data[start..].iter().copied().sum();
            data[start..].iter_mut().for_each(|v| *v /= sum);
        }
        let value = Tensor::from_vec(value.shape(), data).expect("same shape");
        self.push(value, Op::Softmax { x }, &[x])
    }

    /// Concatenates 2-D `B×Dᵢ` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, EngineError> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p)[0])
            .ok_or_else(|| EngineError::Shape("concat of nothing".into()))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match *self.shape(p) {
                [r, w] if r == rows => widths.push(w),
                ref s => {
                    return Err(EngineError::Shape(format!(
                        "concat expects {rows}×D tensors, got {s:?}"
                    )))
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::from_vec(&[rows, total], out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, EngineError> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_last(&mut self, x: Var) -> Result<Var, EngineError> {
        let shape = self.shape(x).to_vec();
        let Some((&d, lead)) = shape.split_last() else {
            return Err(EngineError::Shape("mean_last of a scalar".into()));
        };
        let inv = T::one() / T::of(d as f64);
        let data = self
            .value(x)
            .data()
            .chunks(d)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(lead, data)?;
        Ok(self.push(value, Op::MeanLast { x }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        if self.shape(a) != self.shape(b) {
            return Err(EngineError::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.shape(a), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }
}

pub(crate) fn dense_backward<T: Real>(x: Var, w: Var, b: Var, dout: &[T], nodes: &mut [Node<T>]) {
    let (inp, out_dim) = {
        let s = nodes[w.0].value.shape();
        (s[0], s[1])
    };
    let rows = dout.len() / out_dim;
    let mut dw = take_grad(nodes, w);
    let mut db = take_grad(nodes, b);
    let mut dx = take_grad(nodes, x);
    let xv = nodes[x.0].value.data();
    let wv = nodes[w.0].value.data();
    if let Some(dw) = dw.as_mut() {
        T::gemm(inp, rows, out_dim, T::one(), xv, 1, inp, dout, out_dim, 1, T::one(), dw, out_dim, 1);
    }
    if let Some(db) = db.as_mut() {
        for row in dout.chunks(out_dim) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    if let Some(dx) = dx.as_mut() {
        T::gemm(rows, out_dim, inp, T::one(), dout, out_dim, 1, wv, 1, out_dim, T::one(), dx, inp, 1);
    }
    put_grad(nodes, w, dw);
    put_grad(nodes, b, db);
    put_grad(nodes, x, dx);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap());
        let y = g.softmax(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_vec(&[1, 3], vec![1000.0, 1001.0, 999.0]).unwrap());
        let y = g.softmax(x);
        let s: f64 = g.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(g.value(y).all_finite());
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::filled(&[4, 4], 1.5));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = g.dropout(x, 0.3, &mut rng).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::filled(&[1000], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = g.dropout(x, 0.25, &mut rng).unwrap();
        let vals = g.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
        let dropped = vals.iter().filter(|&&v| v == 0.0).count();
        assert!((150..350).contains(&dropped), "{dropped}");
    }

    #[test]
    fn dropout_rate_must_be_below_one() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::zeros(&[2]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(g.dropout(x, 1.0, &mut rng), Err(EngineError::Config(_))));
        assert!(matches!(g.dropout(x, -0.1, &mut rng), Err(EngineError::Config(_))));
    }

    #[test]
    fn concat_then_mean_last() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let a = g.input(Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap());
        let b = g.input(Tensor::from_vec(&[2, 2], vec![3.0, 5.0, 4.0, 6.0]).unwrap());
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        let m = g.mean_last(c).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 4.0]);
    }

    #[test]
    fn one_by_one_dense_matches_matrix_product() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.input(Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 2.0, 0.5, 1.0, -1.0]).unwrap());
        let b = g.input(Tensor::from_vec(&[3], vec![0.0, 1.0, 0.0]).unwrap());
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 3.0, 0.0]);
    }
}
