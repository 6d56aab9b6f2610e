use super::graph::{put_grad, take_grad, Node, Op};
use super::{EngineError, Graph, Real, Tensor, Var};

/// Predictions are clamped from below before taking the log ratio.
pub const PRED_FLOOR: f64 = 1e-8;
const SIMPLEX_TOL: f64 = 1e-4;

fn check_simplex<T: Real>(rows: &[T], c: usize, what: &str) -> Result<(), EngineError> {
    for (i, row) in rows.chunks(c).enumerate() {
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if row.iter().any(|v| !(v.as_f64() >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(EngineError::Loss(format!(
                "{what} row {i} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    /// `Σ_rows Σ_c y·ln(y / max(ŷ, 1e-8))`, with `0·ln 0 = 0`.
    pub fn kl_div(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, EngineError> {
        if self.shape(pred) != target.shape() || self.shape(pred).len() != 2 {
            return Err(EngineError::Shape(format!(
                "kl_div: prediction {:?} vs target {:?}",
                self.shape(pred),
                target.shape()
            )));
        }
        let c = self.shape(pred)[1];
        check_simplex(target.data(), c, "target")?;
        check_simplex(self.value(pred).data(), c, "prediction")?;
        let floor = T::of(PRED_FLOOR);
        let loss: T = target
            .data()
            .iter()
            .zip(self.value(pred).data())
            .filter(|(&y, _)| y > T::zero())
            .map(|(&y, &p)| y * (y / p.max(floor)).ln())
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::KlDiv {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
        ))
    }

    /// `coeff · Σ‖θ‖²` over the given nodes; `coeff = λ/2` gives the L2 penalty.
    pub fn sum_squares(&mut self, params: &[Var], coeff: f64) -> Result<Var, EngineError> {
        let coeff = T::of(coeff);
        let total: T = params.iter().map(|&p| self.value(p).sum_squares()).sum();
        Ok(self.push(
            Tensor::scalar(coeff * total),
            Op::SumSquares {
                params: params.to_vec(),
                coeff,
            },
            params,
        ))
    }

    /// KL loss plus `(λ/2)·Σ‖θ‖²`.
    pub fn kl_l2_loss(
        &mut self,
        pred: Var,
        target: &Tensor<T>,
        params: &[Var],
        lambda: f64,
    ) -> Result<Var, EngineError> {
        let kl = self.kl_div(pred, target)?;
        if lambda == 0.0 || params.is_empty() {
            return Ok(kl);
        }
        let l2 = self.sum_squares(params, 0.5 * lambda)?;
        self.add(kl, l2)
    }
}

pub(crate) fn kl_backward<T: Real>(pred: Var, target: &[T], dout: T, nodes: &mut [Node<T>]) {
    let Some(mut dp) = take_grad(nodes, pred) else {
        return;
    };
    let floor = T::of(PRED_FLOOR);
    let pv = nodes[pred.0].value.data();
    for ((g, &y), &p) in dp.iter_mut().zip(target).zip(pv) {
        if y > T::zero() && p > floor {
            *g -= dout * y / p;
        }
    }
    put_grad(nodes, pred, Some(dp));
}
