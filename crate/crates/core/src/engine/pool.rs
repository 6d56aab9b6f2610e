use super::graph::{put_grad, take_grad, Node, Op};
use super::{EngineError, Graph, Real, Tensor, Var};

fn dims4(shape: &[usize], what: &str) -> Result<[usize; 4], EngineError> {
    match *shape {
        [b, h, w, c] => Ok([b, h, w, c]),
        _ => Err(EngineError::Shape(format!("{what} expects B×H×W×C, got {shape:?}"))),
    }
}

impl<T: Real> Graph<T> {
    /// Non-overlapping `ph×pw` average pooling.
    pub fn avg_pool(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var, EngineError> {
        let [b, h, w, c] = dims4(self.shape(x), "avg_pool")?;
        if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
            return Err(EngineError::Shape(format!(
                "avg_pool {ph}×{pw} does not tile a {h}×{w} map"
            )));
        }
        let (oh, ow) = (h / ph, w / pw);
        let inv = T::one() / T::of((ph * pw) as f64);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); b * oh * ow * c];
        for n in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let src = &xv[((n * h + y) * w + xx) * c..][..c];
                    let dst = &mut out[((n * oh + y / ph) * ow + xx / pw) * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::from_vec(&[b, oh, ow, c], out)?;
        Ok(self.push(value, Op::AvgPool { x, ph, pw }, &[x]))
    }

    /// Global average pooling: `B×H×W×C → B×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, EngineError> {
        let [b, h, w, c] = dims4(self.shape(x), "global_avg_pool")?;
        let inv = T::one() / T::of((h * w) as f64);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); b * c];
        for (n, img) in xv.chunks(h * w * c).enumerate() {
            let dst = &mut out[n * c..(n + 1) * c];
            for px in img.chunks(c) {
                for (d, &s) in dst.iter_mut().zip(px) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        let value = Tensor::from_vec(&[b, c], out)?;
        Ok(self.push(value, Op::Gap { x }, &[x]))
    }
}

pub(crate) fn avg_pool_backward<T: Real>(
    x: Var,
    ph: usize,
    pw: usize,
    dout: &[T],
    nodes: &mut [Node<T>],
) {
    let Some(mut dx) = take_grad(nodes, x) else {
        return;
    };
    let [b, h, w, c] = dims4(nodes[x.0].value.shape(), "avg_pool").expect("checked in forward");
    let (oh, ow) = (h / ph, w / pw);
    let inv = T::one() / T::of((ph * pw) as f64);
    for n in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let src = &dout[((n * oh + y / ph) * ow + xx / pw) * c..][..c];
                let dst = &mut dx[((n * h + y) * w + xx) * c..][..c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s * inv;
                }
            }
        }
    }
    put_grad(nodes, x, Some(dx));
}

pub(crate) fn gap_backward<T: Real>(x: Var, dout: &[T], nodes: &mut [Node<T>]) {
    let Some(mut dx) = take_grad(nodes, x) else {
        return;
    };
    let [_, h, w, c] = dims4(nodes[x.0].value.shape(), "global_avg_pool").expect("checked");
    let inv = T::one() / T::of((h * w) as f64);
    for (n, img) in dx.chunks_mut(h * w * c).enumerate() {
        let src = &dout[n * c..(n + 1) * c];
        for px in img.chunks_mut(c) {
            for (d, &s) in px.iter_mut().zip(src) {
                *d += s * inv;
            }
        }
    }
    put_grad(nodes, x, Some(dx));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Mode;

    #[test]
    fn two_by_two_pool_is_the_mean() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let y = g.avg_pool(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    }

    #[test]
    fn tall_pool_collapses_rows_only() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let x = g.input(Tensor::from_vec(&[1, 4, 2, 2], data).unwrap());
        let y = g.avg_pool(x, 4, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn non_dividing_pool_is_rejected() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::zeros(&[1, 3, 4, 1]));
        assert!(matches!(g.avg_pool(x, 2, 2), Err(EngineError::Shape(_))));
    }

    #[test]
    fn gap_of_constant_map_and_its_gradient() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.param(Tensor::filled(&[1, 3, 4, 2], 2.5));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5, 2.5]);
        let l = g.sum_squares(&[y], 0.5).unwrap();
        g.backward(l).unwrap();
        // dL/dy = y; spread uniformly as y/(H·W)
        for &d in g.grad(x).unwrap() {
            assert!((d - 2.5 / 12.0).abs() < 1e-12);
        }
    }
}
