use serde::{Deserialize, Serialize};

use super::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Adam {
            config,
            steps: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.steps += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let correction1 = T::of(1.0 - c.beta1.powi(self.steps as i32));
        let correction2 = T::of(1.0 - c.beta2.powi(self.steps as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_at_most_lr() {
        let mut p = vec![Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap()];
        let before = p[0].clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[vec![0.3, -7.0, 1e-3]]);
        for ((a, b), g) in p[0].data().iter().zip(before.data()).zip([0.3, -7.0, 1e-3]) {
            let delta = a - b;
            assert!(delta.abs() <= 1e-4 * (1.0 + 1e-4));
            assert!(delta.signum() == -f64::signum(g));
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap()];
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            adam.step(&mut p, &[vec![0.0, 0.0]]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_a_scalar_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::from_vec(&[1], vec![0.0f64]).unwrap()];
        let mut adam = Adam::new(cfg, &p);
        for _ in 0..200 {
            let w = p[0].data()[0];
            adam.step(&mut p, &[vec![2.0 * (w - 3.0)]]);
        }
        assert!((p[0].data()[0] - 3.0).abs() < 0.05, "{}", p[0].data()[0]);
    }
}
