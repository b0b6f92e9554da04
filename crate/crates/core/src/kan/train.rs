use serde::{Deserialize, Serialize};

use super::network::KanNetwork;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KanOptimizer {
    /// Heavy-ball gradient descent.
    Momentum,
    /// Adam with the usual (0.9, 0.999) moment decay.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Step size at the last step as a fraction of `learning_rate`; the
    /// rate follows a cosine from one to the other. 1 keeps it constant.
    pub final_lr_ratio: f64,
    pub momentum: f64,
    pub optimizer: KanOptimizer,
    /// Weight of the mean-absolute edge output penalty.
    pub lambda: f64,
    /// Hidden grids are refitted to the node ranges every this many steps
    /// (0 disables) until `grid_update_until`.
    pub grid_update_every: usize,
    pub grid_update_until: usize,
    /// Kept for interface symmetry with the other trainers; full-batch
    /// training draws no random numbers.
    pub seed: u64,
}

impl Default for KanTrainConfig {
    fn default() -> Self {
        Self {
            steps: 8000,
            learning_rate: 0.003,
            final_lr_ratio: 1.0,
            momentum: 0.9,
            optimizer: KanOptimizer::Adam,
            lambda: 1e-2,
            grid_update_every: 100,
            grid_update_until: 750,
            seed: 0,
        }
    }
}

/// Full-batch training of a copy of `net`. The trace holds the objective
/// before each step and after the last one.
pub fn kan_train(net: &KanNetwork, x: &FeatureMatrix, y: &[f64], cfg: &KanTrainConfig) -> Result<(KanNetwork, Vec<f64>)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyData);
    }
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.n_rows(), got: y.len() });
    }
    if x.n_cols() != net.n_inputs() {
        return Err(Error::DimensionMismatch { expected: net.n_inputs(), got: x.n_cols() });
    }
    if !(cfg.lambda >= 0.0) || !(cfg.learning_rate >= 0.0) || !(0.0..1.0).contains(&cfg.momentum) || !(cfg.final_lr_ratio > 0.0 && cfg.final_lr_ratio <= 1.0) {
        return Err(Error::InvalidParam("lambda and learning rate must be >= 0, momentum in [0, 1), final rate ratio in (0, 1]".into()));
    }
    let mut net = net.clone();
    net.adapt_grids(x);
    // first-layer grids are never moved, so their basis windows are fixed
    let cache = net.first_layer_windows(x);
    let mut params = net.params();
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let (b1, b2, adam_eps) = (0.9, 0.999, 1e-8);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        if cfg.grid_update_every > 0 && step > 0 && step <= cfg.grid_update_until && step % cfg.grid_update_every == 0 {
            net.adapt_grids(x);
            params = net.params();
        }
        let (loss, _, grad) = net.loss_and_gradient_cached(x, y, cfg.lambda, Some(&cache));
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { stage: step, loss });
        }
        trace.push(loss);
        let progress = step as f64 / cfg.steps.max(2).saturating_sub(1) as f64;
        let lr = cfg.learning_rate * (cfg.final_lr_ratio + (1.0 - cfg.final_lr_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        match cfg.optimizer {
            KanOptimizer::Momentum => {
                for ((p, v), g) in params.iter_mut().zip(m1.iter_mut()).zip(&grad) {
                    *v = cfg.momentum * *v - lr * g;
                    *p += *v;
                }
            }
            KanOptimizer::Adam => {
                let t = (step + 1) as i32;
                let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
                for (((p, m), v), g) in params.iter_mut().zip(m1.iter_mut()).zip(m2.iter_mut()).zip(&grad) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + adam_eps);
                }
            }
        }
        net.set_params(&params);
    }
    let (loss, _) = net.objective(x, y, cfg.lambda);
    if !loss.is_finite() {
        return Err(Error::Diverged { stage: cfg.steps, loss });
    }
    trace.push(loss);
    Ok((net, trace))
}
