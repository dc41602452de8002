use serde::{Deserialize, Serialize};

use crate::model::Params;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Step-decay schedule: `lr0 · decay^⌊epoch / every⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
    pub every: usize,
}

impl LrSchedule {
    /// Learning rate used during `epoch` (0-based).
    pub fn at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.every.max(1)) as i32)
    }
}

/// Adam moments for every parameter leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Params<Tensor>,
    pub v: Params<Tensor>,
}

impl OptimizerState {
    pub fn new(like: &Params<Tensor>) -> Self {
        Self {
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    /// One bias-corrected Adam update of `params` with gradient `grad`.
    pub fn update(&mut self, params: &mut Params<Tensor>, grad: &Params<Tensor>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        let mut m_leaves = self.m.leaves_mut();
        let mut v_leaves = self.v.leaves_mut();
        let p_leaves = params.leaves_mut();
        let g_leaves = grad.leaves();
        for (((p, g), m), v) in p_leaves
            .into_iter()
            .zip(g_leaves)
            .zip(m_leaves.iter_mut())
            .zip(v_leaves.iter_mut())
        {
            let (p, g) = (p.data_mut(), g.data());
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};

    #[test]
    fn schedule_after_2n_epochs_is_exact() {
        let s = LrSchedule {
            lr0: 5e-4,
            decay: 0.8,
            every: 2,
        };
        for n in 0..50 {
            assert_eq!(s.at(2 * n), 5e-4 * 0.8f64.powi(n as i32));
            assert_eq!(s.at(2 * n + 1), s.at(2 * n));
        }
    }

    #[test]
    fn leaf_order_matches_names() {
        let p = ModelParams::init(ModelConfig::default(), 0)
            .unwrap()
            .tensors;
        let named = p.named();
        let flat = p.leaves();
        assert_eq!(named.len(), flat.len());
        for ((_, a), b) in named.iter().zip(flat) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // With bias correction the first update is lr·g/(|g|+ε).
        let config = ModelConfig {
            coord_dim: 4,
            hidden_dim: 4,
            relation_categories: 1,
            modes: 1,
            blocks: 1,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::init(config, 1).unwrap().tensors;
        let before = p.clone();
        let grad = p.map(|_, _, t| Tensor::full(t.rows(), t.cols(), -2.0));
        let mut opt = OptimizerState::new(&p);
        opt.update(&mut p, &grad, 0.01);
        let step = 0.01 * 2.0 / (2.0 + EPSILON);
        let _ = p.zip(&before, |a, b| {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y - step).abs() < 1e-15);
            }
        });
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let config = ModelConfig {
            coord_dim: 2,
            hidden_dim: 2,
            relation_categories: 1,
            modes: 1,
            blocks: 0,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::init(config, 2).unwrap().tensors;
        let mut opt = OptimizerState::new(&p);
        for _ in 0..3000 {
            let grad = p.map(|_, _, t| {
                let mut g = t.clone();
                g.scale_in_place(2.0);
                g
            });
            opt.update(&mut p, &grad, 0.01);
        }
        let zero = p.zeros_like();
        assert!(p.max_abs_diff(&zero) < 1e-3);
    }
}
