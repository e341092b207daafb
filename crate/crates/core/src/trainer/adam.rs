//! Adam with exponentially decaying step size.

use super::TrainConfig;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS_ADAM: f64 = 1e-8;

/// First/second moment vectors plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    /// Completed steps (0 before the first update).
    steps: usize,
}

/// lr(t) = lr0 · decay^⌊t / interval⌋ for 0-based step index t;
/// interval 0 disables decay.
pub fn learning_rate(cfg: &TrainConfig, step_index: usize) -> f64 {
    if cfg.decay_interval == 0 {
        cfg.lr0
    } else {
        cfg.lr0 * cfg.decay.powi((step_index / cfg.decay_interval) as i32)
    }
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState { m: vec![0.0; param_count], v: vec![0.0; param_count], steps: 0 }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One bias-corrected update in place. The caller passes the
    /// learning rate so the schedule stays in one spot ([`learning_rate`]).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + EPS_ADAM);
        }
    }
}
