//! Fully connected feedforward regressor trained by mini-batch gradient
//! descent on mean squared error.
//!
//! Hidden layers use the rectifier, the output is linear. Dropout is the
//! inverted kind: kept hidden activations are scaled by `1 / (1 - rate)`
//! during training so inference uses the weights unchanged. The input layer
//! is never dropped.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer `l` maps `layout[l]` inputs to `layout[l + 1]` outputs; weights are
/// row-major `(out, in)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layout: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub hidden_activation: Activation,
    pub dropout: f64,
    pub seed: u64,
}

/// Forward-pass mode. Training mode draws dropout masks from the given stream.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut Rng),
}

impl MlpModel {
    /// Weights ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in)) from ChaCha8(`seed`),
    /// biases zero.
    pub fn init(layout: &[usize], dropout: f64, seed: u64) -> Result<Self> {
        if layout.len() < 2 {
            return Err(Error::InvalidLayout("need at least an input and an output layer".into()));
        }
        if layout.contains(&0) {
            return Err(Error::InvalidLayout(format!("zero-width layer in {layout:?}")));
        }
        if *layout.last().unwrap_or(&0) != 1 {
            return Err(Error::InvalidLayout("the regressor has a single output".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidParam(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut r = rng::seeded(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layout.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| r.random_range(-limit..limit)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self { layout: layout.to_vec(), weights, biases, hidden_activation: Activation::Relu, dropout, seed })
    }

    /// Two hidden layers of 48 units, dropout 0.1.
    pub fn tuned(n_inputs: usize, seed: u64) -> Result<Self> {
        Self::init(&[n_inputs, 48, 48, 1], 0.1, seed)
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }

    /// Pre-activations and (masked) activations of every layer.
    fn trace(&self, x: &[f64], mut mode: Mode<'_>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut acts = vec![x.to_vec()];
        let keep = 1.0 - self.dropout;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layout[l], self.layout[l + 1]);
            let input = &acts[l];
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            let act = self.activation(l);
            let mut a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if l + 1 < self.n_layers() && self.dropout > 0.0 {
                if let Mode::Train(r) = &mut mode {
                    for v in a.iter_mut() {
                        *v = if r.random::<f64>() < keep { *v / keep } else { 0.0 };
                    }
                }
            }
            debug_assert_eq!(a.len(), n_out);
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<f64> {
        if x.len() != self.layout[0] {
            return Err(Error::DimensionMismatch { expected: self.layout[0], got: x.len() });
        }
        let (_, acts) = self.trace(x, mode);
        Ok(acts[self.n_layers()][0])
    }

    /// Accumulates `scale * d(0.5 * (f - y)^2 * 2)/dtheta`, i.e. `scale * 2 (f - y) df/dtheta`,
    /// into `grad_w` / `grad_b` and returns the squared error.
    fn accumulate_gradient(
        &self,
        x: &[f64],
        y: f64,
        mode: Mode<'_>,
        scale: f64,
        grad_w: &mut [Vec<f64>],
        grad_b: &mut [Vec<f64>],
    ) -> f64 {
        let (pre, acts) = self.trace(x, mode);
        let out = acts[self.n_layers()][0];
        let err = out - y;
        // delta = dL/dz for the current layer
        let mut delta = vec![2.0 * err * scale];
        for l in (0..self.n_layers()).rev() {
            let n_in = self.layout[l];
            let input = &acts[l];
            for (o, &d) in delta.iter().enumerate() {
                grad_b[l][o] += d;
                let gw = &mut grad_w[l][o * n_in..(o + 1) * n_in];
                for (g, a) in gw.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l == 0 {
                break;
            }
            // back through the weights, then through the mask and activation of layer l-1
            let mut next = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                for (nx, w) in next.iter_mut().zip(row) {
                    *nx += d * w;
                }
            }
            let act = self.activation(l - 1);
            for (i, nx) in next.iter_mut().enumerate() {
                let z = pre[l - 1][i];
                let a_unmasked = act.apply(z);
                let mask_scale = if a_unmasked == 0.0 { 1.0 } else { acts[l][i] / a_unmasked };
                *nx *= act.derivative(z) * mask_scale;
            }
            delta = next;
        }
        err * err
    }

    fn zero_grads(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        )
    }

    /// Mean squared error in inference mode.
    pub fn mse(&self, x: &FeatureMatrix, y: &[f64]) -> f64 {
        let sse: f64 = x
            .rows()
            .zip(y)
            .map(|(r, t)| {
                let e = self.predict_unchecked(r) - t;
                e * e
            })
            .sum();
        sse / y.len() as f64
    }

    fn params_flat(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.biases).flatten().copied().collect()
    }

    fn param_mut(&mut self, k: usize) -> &mut f64 {
        let mut k = k;
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            if k < v.len() {
                return &mut v[k];
            }
            k -= v.len();
        }
        panic!("parameter index out of range")
    }
}

impl Predictor for MlpModel {
    fn n_inputs(&self) -> usize {
        self.layout[0]
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let (_, acts) = self.trace(x, Mode::Infer);
        acts[self.n_layers()][0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 is plain mini-batch gradient descent.
    pub momentum: f64,
    pub seed: u64,
}

impl MlpTrainConfig {
    /// 1000 epochs, batches of 32, learning rate 0.01.
    pub fn tuned(seed: u64) -> Self {
        Self { epochs: 1000, batch_size: 32, learning_rate: 0.01, momentum: 0.0, seed }
    }
}

/// Trains a copy of `model`. Batches are reshuffled every epoch from
/// ChaCha8(`seed`); the same stream draws dropout masks. The trace holds the
/// inference-mode training MSE after each epoch.
pub fn mlp_train(model: &MlpModel, x: &FeatureMatrix, y: &[f64], cfg: &MlpTrainConfig) -> Result<(MlpModel, Vec<f64>)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyData);
    }
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.n_rows(), got: y.len() });
    }
    if x.n_cols() != model.layout[0] {
        return Err(Error::DimensionMismatch { expected: model.layout[0], got: x.n_cols() });
    }
    if cfg.batch_size == 0 || cfg.learning_rate < 0.0 || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::InvalidParam("batch size must be positive, lr >= 0, momentum in [0, 1)".into()));
    }
    let mut m = model.clone();
    let mut r = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let (mut vel_w, mut vel_b) = m.zero_grads();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        for batch in order.chunks(cfg.batch_size) {
            let (mut gw, mut gb) = m.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                m.accumulate_gradient(x.row(i), y[i], Mode::Train(&mut r), scale, &mut gw, &mut gb);
            }
            for (l, (w, b)) in m.weights.iter_mut().zip(m.biases.iter_mut()).enumerate() {
                for (k, wk) in w.iter_mut().enumerate() {
                    vel_w[l][k] = cfg.momentum * vel_w[l][k] - cfg.learning_rate * gw[l][k];
                    *wk += vel_w[l][k];
                }
                for (k, bk) in b.iter_mut().enumerate() {
                    vel_b[l][k] = cfg.momentum * vel_b[l][k] - cfg.learning_rate * gb[l][k];
                    *bk += vel_b[l][k];
                }
            }
        }
        let loss = m.mse(x, y);
        if !loss.is_finite() || m.params_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { stage: epoch, loss });
        }
        trace.push(loss);
    }
    Ok((m, trace))
}

/// Compares backpropagated gradients of `(f(x) - y)^2` with central
/// differences and returns the largest relative error
/// `|g_bp - g_fd| / max(|g_bp| + |g_fd|, 1e-12)`.
///
/// Runs on a dropout-free copy. Hidden pre-activations closer to the
/// rectifier kink than the perturbation can move them are nudged away by
/// shifting that unit's bias.
pub fn mlp_gradcheck(model: &MlpModel, x: &[f64], y: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidParam(format!("eps {eps} outside (0, 1e-2]")));
    }
    if x.len() != model.layout[0] {
        return Err(Error::DimensionMismatch { expected: model.layout[0], got: x.len() });
    }
    let mut m = model.clone();
    m.dropout = 0.0;
    let margin = 1e3 * eps;
    // layer by layer, since moving one bias shifts everything downstream
    for l in 0..m.n_layers().saturating_sub(1) {
        let (pre, _) = m.trace(x, Mode::Infer);
        for (o, &z) in pre[l].iter().enumerate() {
            if z.abs() < margin {
                m.biases[l][o] += if z >= 0.0 { 2.0 * margin } else { -2.0 * margin };
            }
        }
    }

    let (mut gw, mut gb) = m.zero_grads();
    m.accumulate_gradient(x, y, Mode::Infer, 1.0, &mut gw, &mut gb);
    let analytic: Vec<f64> = gw.iter().chain(&gb).flatten().copied().collect();
    let loss = |m: &MlpModel| {
        let e = m.predict_unchecked(x) - y;
        e * e
    };
    let mut worst: f64 = 0.0;
    for (k, &g_bp) in analytic.iter().enumerate() {
        let orig = *m.param_mut(k);
        *m.param_mut(k) = orig + eps;
        let plus = loss(&m);
        *m.param_mut(k) = orig - eps;
        let minus = loss(&m);
        *m.param_mut(k) = orig;
        let g_fd = (plus - minus) / (2.0 * eps);
        let rel = (g_bp - g_fd).abs() / (g_bp.abs() + g_fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
