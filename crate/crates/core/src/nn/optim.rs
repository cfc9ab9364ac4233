use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::model::Param;

/// SGD with momentum, weight decay and a per-epoch cosine-annealed
/// learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Vec<f64>>,
    pub epoch: usize,
    pub total_epochs: usize,
}

impl OptimState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64, total_epochs: usize) -> Self {
        assert!(learning_rate > 0.0);
        assert!((0.0..1.0).contains(&momentum));
        assert!(weight_decay >= 0.0);
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
            epoch: 0,
            total_epochs,
        }
    }

    /// Cosine-annealed rate for `epoch`, from the initial rate at 0 down to
    /// 0 at `total_epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.total_epochs == 0 {
            return self.learning_rate;
        }
        let t = epoch.min(self.total_epochs) as f64 / self.total_epochs as f64;
        0.5 * self.learning_rate * (1.0 + (PI * t).cos())
    }

    pub fn lr(&self) -> f64 {
        self.lr_at(self.epoch)
    }
}

/// `v ← m·v + g + wd·p;  p ← p − lr·v`.
pub fn sgd_step(params: &mut [Param<'_>], grads: &[Vec<f64>], state: &mut OptimState) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
    }
    let lr = state.lr();
    for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        assert_eq!(param.values.len(), grad.len());
        for ((p, &g), v) in param.values.iter_mut().zip(grad).zip(vel.iter_mut()) {
            *v = state.momentum * *v + g + state.weight_decay * *p;
            *p -= lr * *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    fn step(p: &mut [f64], g: &[f64], st: &mut OptimState) {
        let mut params = vec![Param {
            kind: ParamKind::Weight,
            layer: 0,
            values: p,
        }];
        sgd_step(&mut params, &[g.to_vec()], st);
    }

    #[test]
    fn plain_step() {
        let mut st = OptimState::new(1.0, 0.0, 0.0, 0);
        let mut p = [0.0];
        step(&mut p, &[1.0], &mut st);
        assert_eq!(p, [-1.0]);
    }

    #[test]
    fn zero_gradient_no_change() {
        let mut st = OptimState::new(0.1, 0.9, 0.0, 10);
        let mut p = [0.25, -3.0];
        step(&mut p, &[0.0, 0.0], &mut st);
        assert_eq!(p, [0.25, -3.0]);
    }

    #[test]
    fn momentum_two_steps_unrolled() {
        let (lr, m) = (0.1, 0.9);
        let mut st = OptimState::new(lr, m, 0.0, 0);
        let mut p = [0.0];
        step(&mut p, &[1.0], &mut st);
        step(&mut p, &[1.0], &mut st);
        // v1 = 1, p1 = -lr; v2 = m + 1, p2 = -lr - lr(m + 1)
        let expected = -lr - lr * (m + 1.0);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_velocity() {
        let mut st = OptimState::new(0.5, 0.0, 0.1, 0);
        let mut p = [2.0];
        step(&mut p, &[0.0], &mut st);
        assert!((p[0] - (2.0 - 0.5 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints() {
        let st = OptimState::new(0.1, 0.9, 1e-4, 60);
        assert_eq!(st.lr_at(0), 0.1);
        assert!(st.lr_at(60) <= 1e-12 * 0.1);
        assert!((st.lr_at(30) - 0.05).abs() < 1e-15);
        for e in 0..60 {
            assert!(st.lr_at(e + 1) <= st.lr_at(e));
        }
    }
}
