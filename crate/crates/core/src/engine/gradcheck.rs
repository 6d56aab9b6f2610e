//! Central finite-difference gradient checking in `f64`.

use super::{EngineError, Graph, Mode, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest element-wise relative error over all inputs.
    pub max_rel_error: f64,
    /// Input index and flat element where `max_rel_error` occurs.
    pub worst: (usize, usize),
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Values below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
///
/// `build` must be deterministic: it is re-run for every perturbed element.
pub fn check<F>(inputs: &[Tensor<f64>], mode: Mode, h: f64, build: F) -> Result<GradCheck, EngineError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, EngineError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, EngineError> {
        let mut g = Graph::new(mode);
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new(mode);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut max_rel_error: f64 = 0.0;
    let mut worst = (0, 0);
    for i in 0..inputs.len() {
        let mut num = vec![0.0; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            num[j] = (up - down) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (a - num[j]).abs() / a.abs().max(num[j].abs()).max(REL_FLOOR);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = (i, j);
            }
        }
        numeric.push(num);
    }
    Ok(GradCheck {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}
