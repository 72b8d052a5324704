//! Stochastic gradient descent with momentum and weight decay, plus the
//! stepped learning-rate schedule.
//!
//! The update follows the convention used by mainstream deep-learning
//! frameworks: weight decay is added to the gradient before the momentum
//! buffer accumulates it, and the parameter moves against the buffer:
//!
//! ```text
//! g' = g + weight_decay * p
//! v  = momentum * v + g'
//! p -= lr * v
//! ```
//!
//! Velocity buffers are keyed by parameter path so a frozen module simply
//! never reaches the optimizer.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use crate::fmath;
use crate::tensor::Tensor;

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Momentum-SGD state: one velocity buffer per parameter path.
#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: SgdConfig,
    velocities: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd {
            cfg,
            velocities: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> SgdConfig {
        self.cfg
    }

    /// Applies one update to `param` under the given per-step learning rate
    /// (the schedule lives outside the optimizer).
    pub fn step(&mut self, key: &str, param: &mut Tensor, grad: &Tensor, lr: f64) {
        assert_eq!(
            param.shape(),
            grad.shape(),
            "gradient shape mismatch for {key}"
        );
        let velocity = self
            .velocities
            .entry(key.to_string())
            .or_insert_with(|| Tensor::zeros(param.rows(), param.cols()));
        for i in 0..param.data().len() {
            let g = grad.data()[i] + self.cfg.weight_decay * param.data()[i];
            let v = self.cfg.momentum * velocity.data()[i] + g;
            velocity.data_mut()[i] = v;
            param.data_mut()[i] -= lr * v;
        }
    }

    /// Velocity buffers, exposed for checkpointing.
    pub fn velocities(&self) -> &BTreeMap<String, Tensor> {
        &self.velocities
    }

    /// Restores velocity buffers from a checkpoint.
    pub fn restore_velocities(&mut self, velocities: BTreeMap<String, Tensor>) {
        self.velocities = velocities;
    }
}

/// Stepped learning-rate schedule: the base rate multiplied by
/// `factor^(epoch / every)`. Epochs count within the current training stage.
pub fn step_lr(base: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    assert!(every > 0, "lr decay interval must be positive");
    base * fmath::powf(factor, (epoch / every) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_matches_the_hand_computed_update() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
        };
        let mut sgd = Sgd::new(cfg);
        let mut p = Tensor::from_rows(&[&[2.0]]);
        let g = Tensor::from_rows(&[&[0.5]]);
        sgd.step("p", &mut p, &g, cfg.lr);
        // g' = 0.5 + 0.01*2.0 = 0.52; v = 0.52; p = 2.0 - 0.1*0.52
        assert!((p.get(0, 0) - (2.0 - 0.052)).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates_across_steps() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut sgd = Sgd::new(cfg);
        let mut p = Tensor::from_rows(&[&[1.0]]);
        let g = Tensor::from_rows(&[&[1.0]]);
        sgd.step("p", &mut p, &g, cfg.lr);
        // v1 = 1; p = 1 - 0.1 = 0.9
        assert!((p.get(0, 0) - 0.9).abs() < 1e-15);
        sgd.step("p", &mut p, &g, cfg.lr);
        // v2 = 0.9*1 + 1 = 1.9; p = 0.9 - 0.19 = 0.71
        assert!((p.get(0, 0) - 0.71).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_with_decay_still_shrinks_weights() {
        let cfg = SgdConfig {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.1,
        };
        let mut sgd = Sgd::new(cfg);
        let mut p = Tensor::from_rows(&[&[2.0]]);
        let g = Tensor::zeros(1, 1);
        sgd.step("p", &mut p, &g, cfg.lr);
        // g' = 0.1*2 = 0.2; p = 2 - 0.5*0.2 = 1.9
        assert!((p.get(0, 0) - 1.9).abs() < 1e-15);
    }

    #[test]
    fn velocities_are_independent_per_key() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut sgd = Sgd::new(cfg);
        let mut a = Tensor::from_rows(&[&[1.0]]);
        let mut b = Tensor::from_rows(&[&[1.0]]);
        let g = Tensor::from_rows(&[&[1.0]]);
        sgd.step("a", &mut a, &g, cfg.lr);
        sgd.step("a", &mut a, &g, cfg.lr);
        sgd.step("b", &mut b, &g, cfg.lr);
        assert!((a.get(0, 0) - 0.71).abs() < 1e-15);
        assert!((b.get(0, 0) - 0.9).abs() < 1e-15);
        assert_eq!(sgd.velocities().len(), 2);
    }

    #[test]
    fn descent_converges_on_a_quadratic() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut sgd = Sgd::new(cfg);
        // Momentum contracts the error by sqrt(0.9) per step here, so 400
        // steps land well inside the tolerance.
        let mut p = Tensor::from_rows(&[&[0.0]]);
        for _ in 0..400 {
            // d/dp (p-3)^2 = 2(p-3)
            let g = Tensor::from_rows(&[&[2.0 * (p.get(0, 0) - 3.0)]]);
            sgd.step("p", &mut p, &g, cfg.lr);
        }
        assert!((p.get(0, 0) - 3.0).abs() < 1e-6, "p = {}", p.get(0, 0));
    }

    #[test]
    fn schedule_steps_down_every_interval() {
        assert_eq!(step_lr(0.01, 0.1, 20, 0), 0.01);
        assert_eq!(step_lr(0.01, 0.1, 20, 19), 0.01);
        assert!((step_lr(0.01, 0.1, 20, 20) - 0.001).abs() < 1e-18);
        assert!((step_lr(0.01, 0.1, 20, 39) - 0.001).abs() < 1e-18);
        assert!((step_lr(0.01, 0.1, 20, 40) - 0.0001).abs() < 1e-19);
    }

    #[test]
    fn restored_velocities_continue_the_trajectory() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let g = Tensor::from_rows(&[&[1.0]]);

        let mut full = Sgd::new(cfg);
        let mut p_full = Tensor::from_rows(&[&[1.0]]);
        for _ in 0..4 {
            full.step("p", &mut p_full, &g, cfg.lr);
        }

        let mut first = Sgd::new(cfg);
        let mut p_half = Tensor::from_rows(&[&[1.0]]);
        first.step("p", &mut p_half, &g, cfg.lr);
        first.step("p", &mut p_half, &g, cfg.lr);
        let saved = first.velocities().clone();
        let mut second = Sgd::new(cfg);
        second.restore_velocities(saved);
        second.step("p", &mut p_half, &g, cfg.lr);
        second.step("p", &mut p_half, &g, cfg.lr);

        assert_eq!(p_full.get(0, 0), p_half.get(0, 0));
    }
}
