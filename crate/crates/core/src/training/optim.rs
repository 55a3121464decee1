use serde::{Deserialize, Serialize};

use crate::models::SeqModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer over a flat parameter vector. `step` descends
/// along the given gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    /// Global gradient-norm bound applied before the update.
    clip: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, clip: Option<f64>, n_params: usize) -> Self {
        let state = if kind == OptimizerKind::Adam {
            n_params
        } else {
            0
        };
        Optimizer {
            kind,
            lr,
            clip,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        }
    }

    pub fn for_model(kind: OptimizerKind, lr: f64, clip: Option<f64>, model: &SeqModel) -> Self {
        Self::new(kind, lr, clip, model.n_params())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        let scale = match self.clip {
            Some(c) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * scale * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i] * scale;
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0, 2.0];
        Optimizer::new(OptimizerKind::Sgd, 0.5, None, 2).step(&mut p, &[2.0, -2.0]);
        assert_eq!(p, vec![0.0, 3.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![0.0, 0.0, 0.0];
        Optimizer::new(OptimizerKind::Adam, 0.1, None, 3).step(&mut p, &[3.0, -0.01, 0.0]);
        assert!((p[0] + 0.1).abs() < 1e-6);
        assert!((p[1] - 0.1).abs() < 1e-4);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut p = vec![0.0, 0.0];
        Optimizer::new(OptimizerKind::Sgd, 1.0, Some(1.0), 2).step(&mut p, &[3.0, 4.0]);
        assert!((p[0] + 0.6).abs() < 1e-12 && (p[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, None, 2);
        for _ in 0..500 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
