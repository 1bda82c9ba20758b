use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Learning rate as a function of the epoch index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr0 * (1 + cos(pi * e / epochs)) / 2`, no restarts.
    Cosine { lr0: f64, epochs: usize },
    /// `lr0 * factor^k` where `k` counts the drop epochs `<= e`.
    Step { lr0: f64, drops: Vec<usize>, factor: f64 },
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::Cosine { lr0, epochs } => {
                let t = epoch.min(*epochs) as f64 / (*epochs).max(1) as f64;
                lr0 * (1.0 + (PI * t).cos()) / 2.0
            }
            LrSchedule::Step { lr0, drops, factor } => {
                let passed = drops.iter().filter(|&&d| d <= epoch).count();
                lr0 * factor.powi(passed as i32)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr0 = match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::Cosine { lr0, .. } => *lr0,
            LrSchedule::Step { lr0, factor, .. } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    return Err(Error::Config(format!("step factor must be positive, got {factor}")));
                }
                *lr0
            }
        };
        if !(lr0.is_finite() && lr0 > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr0}")));
        }
        Ok(())
    }
}

/// Stochastic gradient descent, optionally with heavy-ball momentum.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: Vec::new(),
        }
    }

    /// `p <- p - lr * g` (or the momentum variant) for each parameter tensor.
    pub fn step<T: Real>(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.momentum == 0.0 {
            for (p, g) in params.iter_mut().zip(grads) {
                sgd_update(p, g, lr);
            }
            return;
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv.to_acc();
                *pv = T::from_acc(pv.to_acc() - lr * *vv);
            }
        }
    }
}

fn sgd_update<T: Real>(p: &mut Tensor<T>, g: &Tensor<T>, lr: f64) {
    debug_assert_eq!(p.shape(), g.shape());
    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
        *pv = T::from_acc(pv.to_acc() - lr * gv.to_acc());
    }
}

/// One plain SGD update at the schedule's rate for `epoch`.
pub fn sgd_step<T: Real>(params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], schedule: &LrSchedule, epoch: usize) {
    let lr = schedule.lr(epoch);
    for (p, g) in params.iter_mut().zip(grads) {
        sgd_update(p, g, lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let s = LrSchedule::Cosine { lr0: 1e-2, epochs: 200 };
        assert_eq!(s.lr(0), 1e-2);
        assert!(s.lr(200).abs() < 1e-18);
        assert!((s.lr(100) - 5e-3).abs() < 1e-15);
        assert!((0..200).all(|e| s.lr(e) > 0.0));
    }

    #[test]
    fn step_drops() {
        let s = LrSchedule::Step { lr0: 1e-3, drops: vec![35, 45], factor: 0.1 };
        assert_eq!(s.lr(34), 1e-3);
        assert!((s.lr(35) - 1e-4).abs() < 1e-18);
        assert!((s.lr(45) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_vec(&[3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        sgd_step(&mut [&mut p], &[g], &LrSchedule::Constant { lr: 0.5 }, 0);
        assert_eq!(p, before);
    }

    #[test]
    fn plain_update() {
        let mut p = Tensor::from_vec(&[2], vec![1.0f64, -1.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![2.0, 4.0]).unwrap();
        Sgd::new(0.0).step(&mut [&mut p], &[g], 0.25);
        assert_eq!(p.data(), &[0.5, -2.0]);
    }
}
