use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spline::{BasisWindow, SplineGrid};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng;

/// Smallest accepted number of grid intervals per edge.
pub const MIN_GRID: usize = 4;
/// Default number of grid intervals per edge.
pub const DEFAULT_GRID: usize = 8;

/// Narrowest span a hidden-layer grid is allowed to shrink to.
pub const MIN_HIDDEN_WIDTH: f64 = 0.1;

/// Rows per gradient chunk. Chunk sums are combined in a fixed order so the
/// result does not depend on the thread count.
const CHUNK: usize = 256;

/// Univariate edge function `bypass * x + Σ coef_j B_j(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub grid: SplineGrid,
    pub bypass: f64,
    pub coef: Vec<f64>,
}

impl Edge {
    pub fn zero(grid: SplineGrid) -> Self {
        Self { grid, bypass: 0.0, coef: vec![0.0; grid.n_basis()] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_window(x).0
    }

    /// Value, slope and the basis window used.
    fn eval_window(&self, x: f64) -> (f64, f64, BasisWindow) {
        self.eval_with(x, self.grid.window(x))
    }

    fn eval_with(&self, x: f64, w: BasisWindow) -> (f64, f64, BasisWindow) {
        let c = &self.coef[w.first..w.first + 4];
        let mut v = self.bypass * x;
        let mut d = self.bypass;
        for k in 0..4 {
            v += c[k] * w.values[k];
            d += c[k] * w.slopes[k];
        }
        (v, d, w)
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.eval_window(x).1
    }

    /// Least-squares spline coefficients (bypass held fixed) so that the edge
    /// reproduces `ys` at `xs`. A tiny ridge keeps uncovered bases at zero.
    pub fn fit_coefficients(&mut self, xs: &[f64], ys: &[f64]) {
        let n = self.grid.n_basis();
        let a = DMatrix::from_fn(xs.len(), n, |r, c| {
            let w = self.grid.window(xs[r]);
            if (w.first..w.first + 4).contains(&c) {
                w.values[c - w.first]
            } else {
                0.0
            }
        });
        let b = DVector::from_iterator(ys.len(), xs.iter().zip(ys).map(|(x, y)| y - self.bypass * x));
        let mut ata = a.transpose() * &a;
        for i in 0..n {
            ata[(i, i)] += 1e-10;
        }
        let atb = a.transpose() * b;
        if let Some(sol) = ata.cholesky().map(|c| c.solve(&atb)) {
            self.coef = sol.iter().copied().collect();
        }
    }

    fn n_params(&self) -> usize {
        1 + self.coef.len()
    }
}

/// Edges of one layer, `edges[q * n_in + p]` mapping input `p` to output `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub edges: Vec<Edge>,
}

impl KanLayer {
    pub fn edge(&self, q: usize, p: usize) -> &Edge {
        &self.edges[q * self.n_in + p]
    }

    pub fn edge_mut(&mut self, q: usize, p: usize) -> &mut Edge {
        &mut self.edges[q * self.n_in + p]
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_out];
        for (q, o) in out.iter_mut().enumerate() {
            for (p, &x) in input.iter().enumerate() {
                *o += self.edge(q, p).eval(x);
            }
        }
        out
    }
}

/// Network whose node values are sums of univariate edge functions of the
/// previous layer's nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanNetwork {
    pub layout: Vec<usize>,
    pub grid_intervals: usize,
    pub layers: Vec<KanLayer>,
    pub seed: u64,
}

/// Per-row record of the forward pass needed for backpropagation.
struct Trace {
    nodes: Vec<Vec<f64>>,
    /// Per layer, per edge: (value, slope, window).
    edges: Vec<Vec<(f64, f64, BasisWindow)>>,
}

impl KanNetwork {
    /// Spline coefficients ~ U(-0.1, 0.1) / fan-in, bypass weights
    /// ~ U(0.5, 1.5) / fan-in, all grids on `[0, 1]`.
    pub fn init(layout: &[usize], grid: usize, seed: u64) -> Result<Self> {
        if layout.len() < 2 || layout.contains(&0) {
            return Err(Error::InvalidLayout(format!("layout {layout:?} needs at least two nonzero widths")));
        }
        if grid < MIN_GRID {
            return Err(Error::InvalidLayout(format!("grid of {grid} intervals is below {MIN_GRID}")));
        }
        let mut r = rng::seeded(seed);
        let layers = layout
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let scale = 1.0 / n_in as f64;
                let edges = (0..n_in * n_out)
                    .map(|_| {
                        let g = SplineGrid::new(0.0, 1.0, grid);
                        let bypass = r.random_range(0.5..1.5) * scale;
                        let coef = (0..g.n_basis()).map(|_| r.random_range(-0.1..0.1) * scale).collect();
                        Edge { grid: g, bypass, coef }
                    })
                    .collect();
                KanLayer { n_in, n_out, edges }
            })
            .collect();
        Ok(Self { layout: layout.to_vec(), grid_intervals: grid, layers, seed })
    }

    pub fn n_inputs(&self) -> usize {
        self.layout[0]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.edges).map(Edge::n_params).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch { expected: self.n_inputs(), got: x.len() });
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        h[0]
    }

    /// Node values of every layer, input first.
    pub fn node_values(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut nodes = vec![x.to_vec()];
        for layer in &self.layers {
            let next = layer.forward(nodes.last().expect("nonempty"));
            nodes.push(next);
        }
        nodes
    }

    /// True when `x` lies outside the first-layer grids and the edges are
    /// evaluated by extension.
    pub fn is_extrapolating(&self, x: &[f64]) -> bool {
        let first = &self.layers[0];
        x.iter().enumerate().any(|(p, &v)| !first.edge(0, p).grid.contains(v))
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut nodes = vec![x.to_vec()];
        let mut edges = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = nodes.last().expect("nonempty");
            let mut out = vec![0.0; layer.n_out];
            let mut rec = Vec::with_capacity(layer.edges.len());
            for q in 0..layer.n_out {
                for (p, &v) in input.iter().enumerate() {
                    let e = layer.edge(q, p).eval_window(v);
                    out[q] += e.0;
                    rec.push(e);
                }
            }
            nodes.push(out);
            edges.push(rec);
        }
        Trace { nodes, edges }
    }

    fn param_offsets(&self) -> Vec<Vec<usize>> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                l.edges
                    .iter()
                    .map(|e| {
                        let o = off;
                        off += e.n_params();
                        o
                    })
                    .collect()
            })
            .collect()
    }

    /// Flat parameter vector: per layer, per edge, `[bypass, coef..]`.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for e in self.layers.iter().flat_map(|l| &l.edges) {
            v.push(e.bypass);
            v.extend_from_slice(&e.coef);
        }
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut k = 0;
        for e in self.layers.iter_mut().flat_map(|l| l.edges.iter_mut()) {
            e.bypass = p[k];
            let n = e.coef.len();
            e.coef.copy_from_slice(&p[k + 1..k + 1 + n]);
            k += 1 + n;
        }
    }

    /// Objective `mean (f - y)^2 + lambda * Σ_edges mean |φ_edge|` and the
    /// corresponding mean squared error.
    pub fn objective(&self, x: &FeatureMatrix, y: &[f64], lambda: f64) -> (f64, f64) {
        let n = y.len() as f64;
        let (sse, l1) = x
            .rows()
            .zip(y)
            .map(|(row, t)| {
                let tr = self.trace(row);
                let e = tr.nodes.last().expect("output")[0] - t;
                let l1: f64 = tr.edges.iter().flatten().map(|(v, _, _)| v.abs()).sum();
                (e * e, l1)
            })
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        (sse / n + lambda * l1 / n, sse / n)
    }

    /// Objective, mean squared error and the gradient of the objective.
    pub fn loss_and_gradient(&self, x: &FeatureMatrix, y: &[f64], lambda: f64) -> (f64, f64, Vec<f64>) {
        self.loss_and_gradient_cached(x, y, lambda, None)
    }

    /// First-layer basis windows for every row of `x`, indexed
    /// `[row * n_edges + edge]`. Valid while the first-layer grids are fixed.
    pub(crate) fn first_layer_windows(&self, x: &FeatureMatrix) -> Vec<BasisWindow> {
        let layer = &self.layers[0];
        x.rows()
            .flat_map(|row| {
                (0..layer.n_out).flat_map(move |q| (0..layer.n_in).map(move |p| layer.edge(q, p).grid.window(row[p])))
            })
            .collect()
    }

    pub(crate) fn loss_and_gradient_cached(
        &self,
        x: &FeatureMatrix,
        y: &[f64],
        lambda: f64,
        cache: Option<&[BasisWindow]>,
    ) -> (f64, f64, Vec<f64>) {
        let n = y.len();
        let offsets = self.param_offsets();
        let n_params = self.n_params();
        let inv_n = 1.0 / n as f64;
        let n_edges0 = self.layers[0].edges.len();
        let chunks: Vec<(f64, f64, Vec<f64>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|rows| {
                let mut grad = vec![0.0; n_params];
                let (mut sse, mut l1) = (0.0, 0.0);
                // scratch reused across rows
                let mut nodes: Vec<Vec<f64>> = self.layout.iter().map(|&w| vec![0.0; w]).collect();
                let mut recs: Vec<Vec<(f64, f64, BasisWindow)>> = self
                    .layers
                    .iter()
                    .map(|l| vec![(0.0, 0.0, BasisWindow { first: 0, values: [0.0; 4], slopes: [0.0; 4] }); l.edges.len()])
                    .collect();
                let widest = self.layout.iter().copied().max().unwrap_or(1);
                let (mut g_next, mut g_in) = (vec![0.0; widest], vec![0.0; widest]);
                for &i in rows {
                    nodes[0].copy_from_slice(x.row(i));
                    for (l, layer) in self.layers.iter().enumerate() {
                        let (before, after) = nodes.split_at_mut(l + 1);
                        let (input, out) = (&before[l], &mut after[0]);
                        out.fill(0.0);
                        for q in 0..layer.n_out {
                            for (p, &v) in input.iter().enumerate() {
                                let e = q * layer.n_in + p;
                                let edge = &layer.edges[e];
                                let r = match cache {
                                    Some(c) if l == 0 => edge.eval_with(v, c[i * n_edges0 + e]),
                                    _ => edge.eval_window(v),
                                };
                                out[q] += r.0;
                                recs[l][e] = r;
                            }
                        }
                    }
                    let err = nodes[self.layers.len()][0] - y[i];
                    sse += err * err;
                    g_next[0] = 2.0 * err * inv_n;
                    for (l, layer) in self.layers.iter().enumerate().rev() {
                        let input = &nodes[l];
                        g_in[..layer.n_in].fill(0.0);
                        for q in 0..layer.n_out {
                            for p in 0..layer.n_in {
                                let e = q * layer.n_in + p;
                                let (v, slope, w) = recs[l][e];
                                l1 += v.abs();
                                let sign = if v > 0.0 {
                                    1.0
                                } else if v < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                };
                                let d = g_next[q] + lambda * inv_n * sign;
                                let o = offsets[l][e];
                                grad[o] += d * input[p];
                                for k in 0..4 {
                                    grad[o + 1 + w.first + k] += d * w.values[k];
                                }
                                g_in[p] += d * slope;
                            }
                        }
                        std::mem::swap(&mut g_next, &mut g_in);
                    }
                }
                (sse, l1, grad)
            })
            .collect();
        let mut grad = vec![0.0; n_params];
        let (mut sse, mut l1) = (0.0, 0.0);
        for (s, l, g) in chunks {
            sse += s;
            l1 += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let mse = sse * inv_n;
        (mse + lambda * l1 * inv_n, mse, grad)
    }

    /// Re-centres the grids of hidden-layer edges on the node ranges seen in
    /// `x` (plus a 5% margin, at least [`MIN_HIDDEN_WIDTH`] wide) and refits their coefficients so each edge keeps
    /// its current shape over the new range.
    pub fn adapt_grids(&mut self, x: &FeatureMatrix) {
        if self.layers.len() < 2 || x.is_empty() {
            return;
        }
        let all_nodes: Vec<Vec<Vec<f64>>> = x.rows().map(|r| self.node_values(r)).collect();
        for l in 1..self.layers.len() {
            let n_in = self.layers[l].n_in;
            for p in 0..n_in {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for nodes in &all_nodes {
                    lo = lo.min(nodes[l][p]);
                    hi = hi.max(nodes[l][p]);
                }
                let margin = 0.05 * (hi - lo);
                let (mut lo, mut hi) = (lo - margin, hi + margin);
                // a collapsed range would make the edge arbitrarily steep
                if hi - lo < MIN_HIDDEN_WIDTH {
                    let mid = 0.5 * (lo + hi);
                    (lo, hi) = (mid - 0.5 * MIN_HIDDEN_WIDTH, mid + 0.5 * MIN_HIDDEN_WIDTH);
                }
                for q in 0..self.layers[l].n_out {
                    let edge = self.layers[l].edge_mut(q, p);
                    let new_grid = SplineGrid::new(lo, hi, edge.grid.intervals);
                    let m = 4 * new_grid.n_basis();
                    let xs: Vec<f64> = (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect();
                    let ys: Vec<f64> = xs.iter().map(|&v| edge.eval(v)).collect();
                    edge.grid = new_grid;
                    edge.fit_coefficients(&xs, &ys);
                }
            }
        }
    }
}

impl Predictor for KanNetwork {
    fn n_inputs(&self) -> usize {
        self.layout[0]
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.forward_unchecked(x)
    }
}

/// Compares the analytic gradient of the objective at one row with central
/// differences, returning the largest relative error
/// `|g_a - g_fd| / max(|g_a| + |g_fd|, floor)`. The floor sits at the
/// difference quotient's rounding noise `ε_mach·max(|L|, 1)/eps` divided by
/// 1e-4, so components too small to resolve are compared absolutely.
pub fn kan_gradcheck(net: &KanNetwork, x: &[f64], y: f64, lambda: f64, eps: f64) -> Result<f64> {
    if x.len() != net.n_inputs() {
        return Err(Error::DimensionMismatch { expected: net.n_inputs(), got: x.len() });
    }
    let xm = FeatureMatrix::from_rows(&[x.to_vec()])?;
    let ys = [y];
    let (loss, _, analytic) = net.loss_and_gradient(&xm, &ys, lambda);
    let floor = (1e4 * f64::EPSILON * loss.abs().max(1.0) / eps).max(1e-12);
    let base = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (k, &g_a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + eps;
        probe.set_params(&p);
        let plus = probe.objective(&xm, &ys, lambda).0;
        p[k] = base[k] - eps;
        probe.set_params(&p);
        let minus = probe.objective(&xm, &ys, lambda).0;
        let g_fd = (plus - minus) / (2.0 * eps);
        worst = worst.max((g_a - g_fd).abs() / (g_a.abs() + g_fd.abs()).max(floor));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_guards_and_determinism() {
        assert!(matches!(KanNetwork::init(&[10, 2, 1], 3, 1), Err(Error::InvalidLayout(_))));
        assert!(matches!(KanNetwork::init(&[10, 0, 1], 8, 1), Err(Error::InvalidLayout(_))));
        let a = KanNetwork::init(&[10, 2, 1], 8, 5).unwrap();
        assert_eq!(a, KanNetwork::init(&[10, 2, 1], 8, 5).unwrap());
        assert_eq!(a.n_params(), 22 * 12);
    }

    #[test]
    fn zeroed_edges_output_zero() {
        let mut net = KanNetwork::init(&[3, 2, 1], 5, 1).unwrap();
        net.set_params(&vec![0.0; net.n_params()]);
        assert_eq!(net.forward(&[0.2, 0.9, 0.4]).unwrap(), 0.0);
        assert!(matches!(net.forward(&[0.2]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn identity_spline() {
        let mut net = KanNetwork::init(&[1, 1], 8, 1).unwrap();
        let edge = net.layers[0].edge_mut(0, 0);
        edge.bypass = 0.0;
        let xs: Vec<f64> = (0..=40).map(|k| k as f64 / 40.0).collect();
        edge.fit_coefficients(&xs, &xs.clone());
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            assert!((net.forward(&[x]).unwrap() - x).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let mut r = rng::seeded(3);
        for seed in 0..10 {
            let net = KanNetwork::init(&[3, 2, 1], 5, seed).unwrap();
            let x: Vec<f64> = (0..3).map(|_| r.random::<f64>()).collect();
            let err = kan_gradcheck(&net, &x, 0.4, 1e-3, 1e-6).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn grid_adaptation_preserves_function() {
        let mut net0 = KanNetwork::init(&[2, 3, 1], 6, 4).unwrap();
        // smooth outer edges; random coefficients have detail a moved grid cannot keep
        let xs: Vec<f64> = (0..=60).map(|k| k as f64 / 60.0).collect();
        for (j, edge) in net0.layers[1].edges.iter_mut().enumerate() {
            let ys: Vec<f64> = xs.iter().map(|v| (j as f64 + 1.0) * 0.2 * v * v + edge.bypass * v).collect();
            edge.fit_coefficients(&xs, &ys);
        }
        let mut net = net0.clone();
        let mut r = rng::seeded(8);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        net.adapt_grids(&x);
        for row in x.rows() {
            let (a, b) = (net0.forward(row).unwrap(), net.forward(row).unwrap());
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }
}
