//! CART regression trees, bagged forests and gradient-boosted ensembles.
//!
//! Split search is exact: for every candidate feature the node rows are
//! sorted and every midpoint between consecutive distinct values is scored.
//! Ties (gains equal within [`TIE_RTOL`] relative) go to the lower feature
//! index, then the lower threshold, because candidates are visited in that
//! order and a later candidate must be strictly better to win.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::{decimal_string, Predictor};
use crate::rng::{self, Rng};

/// Relative tolerance under which two split gains count as tied.
pub const TIE_RTOL: f64 = 1e-10;

/// Relative gain (against the node's sum of squares) a split must exceed.
const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        #[serde(with = "decimal_string")]
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        #[serde(with = "decimal_string")]
        value: f64,
        n_samples: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features drawn (without replacement) as split candidates at each node.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_samples_leaf: 1, max_features: None }
    }
}

/// A fitted binary regression tree. Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_value(value: f64, n_features: usize, n_samples: usize) -> Self {
        Self { n_features, nodes: vec![Node::Leaf { value, n_samples }] }
    }

    /// Walks from the root; `x[feature] <= threshold` goes left.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, n_samples } => Some((*value, *n_samples)),
            Node::Split { .. } => None,
        })
    }
}

impl Predictor for DecisionTree {
    fn n_inputs(&self) -> usize {
        self.n_features
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }
}

#[derive(Clone, Copy, Debug)]
enum Objective {
    /// Sum of squared errors; leaves hold target means.
    Sse,
    /// Second-order boosting objective for squared loss (unit hessians).
    Boost { lambda: f64, alpha: f64, gamma: f64, min_child_weight: f64 },
}

impl Objective {
    fn soft_threshold(g: f64, alpha: f64) -> f64 {
        g.signum() * (g.abs() - alpha).max(0.0)
    }

    /// Score of a child holding target sum `s` over `n` rows; larger is better.
    fn score(&self, s: f64, n: f64) -> f64 {
        match *self {
            Objective::Sse => s * s / n,
            Objective::Boost { lambda, alpha, .. } => {
                let t = Self::soft_threshold(s, alpha);
                t * t / (n + lambda)
            }
        }
    }

    fn gain(&self, left: (f64, f64), right: (f64, f64), parent: (f64, f64)) -> f64 {
        let raw = self.score(left.0, left.1) + self.score(right.0, right.1) - self.score(parent.0, parent.1);
        match self {
            Objective::Sse => raw,
            Objective::Boost { .. } => 0.5 * raw,
        }
    }

    fn threshold(&self) -> f64 {
        match *self {
            Objective::Sse => 0.0,
            Objective::Boost { gamma, .. } => gamma,
        }
    }

    fn child_ok(&self, n: usize, min_samples_leaf: usize) -> bool {
        match *self {
            Objective::Sse => n >= min_samples_leaf,
            Objective::Boost { min_child_weight, .. } => n >= min_samples_leaf && n as f64 >= min_child_weight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn is_better(new: f64, incumbent: f64) -> bool {
    new > incumbent + TIE_RTOL * new.abs().max(incumbent.abs())
}

/// Midpoint that always separates `a < b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    target: &'a [f64],
    objective: Objective,
    params: &'a TreeParams,
    allowed: Option<&'a [usize]>,
    rng: Option<&'a mut Rng>,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let s: f64 = idx.iter().map(|&i| self.target[i]).sum();
        let n = idx.len() as f64;
        match self.objective {
            Objective::Sse => s / n,
            Objective::Boost { lambda, alpha, .. } => -Objective::soft_threshold(s, alpha) / (n + lambda),
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let pool: Vec<usize> = match self.allowed {
            Some(a) => a.to_vec(),
            None => (0..self.x.n_cols()).collect(),
        };
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < pool.len() => {
                let mut picked: Vec<usize> = sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
                picked.sort_unstable();
                picked
            }
            _ => pool,
        }
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<Candidate> {
        let n = idx.len();
        if n < 2 * self.params.min_samples_leaf.max(1) {
            return None;
        }
        // centering keeps the prefix-sum gains exact for constant targets
        let center = match self.objective {
            Objective::Sse => idx.iter().map(|&i| self.target[i]).sum::<f64>() / n as f64,
            Objective::Boost { .. } => 0.0,
        };
        let t = |i: usize| self.target[i] - center;
        let total: f64 = idx.iter().map(|&i| t(i)).sum();
        let sum_sq: f64 = idx.iter().map(|&i| t(i) * t(i)).sum();
        let parent = (total, n as f64);
        let min_gain = self.objective.threshold().max(0.0) + MIN_RELATIVE_GAIN * sum_sq;

        let mut best: Option<Candidate> = None;
        let mut order = idx.to_vec();
        for f in self.candidate_features() {
            order.sort_by(|&a, &b| self.x.get(a, f).total_cmp(&self.x.get(b, f)).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += t(order[k]);
                let (lo, hi) = (self.x.get(order[k], f), self.x.get(order[k + 1], f));
                if lo == hi {
                    continue;
                }
                let (nl, nr) = (k + 1, n - k - 1);
                if !self.objective.child_ok(nl, self.params.min_samples_leaf)
                    || !self.objective.child_ok(nr, self.params.min_samples_leaf)
                {
                    continue;
                }
                let gain =
                    self.objective.gain((left_sum, nl as f64), (total - left_sum, nr as f64), parent);
                if !(gain > min_gain) {
                    continue;
                }
                if best.is_none_or(|b| is_better(gain, b.gain)) {
                    best = Some(Candidate { feature: f, threshold: midpoint(lo, hi), gain });
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: self.leaf_value(idx), n_samples: idx.len() });
        if self.params.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let Some(split) = self.best_split(idx) else {
            return id;
        };
        let x = self.x;
        let f = split.feature;
        idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let cut = idx.partition_point(|&i| x.get(i, f) <= split.threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split { feature: f, threshold: split.threshold, left, right };
        id
    }
}

fn check_xy(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyData);
    }
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.n_rows(), got: y.len() });
    }
    Ok(())
}

fn fit_on(
    x: &FeatureMatrix,
    target: &[f64],
    idx: &mut [usize],
    objective: Objective,
    params: &TreeParams,
    allowed: Option<&[usize]>,
    rng: Option<&mut Rng>,
) -> DecisionTree {
    let mut b = Builder { x, target, objective, params, allowed, rng, nodes: Vec::new() };
    b.build(idx, 0);
    DecisionTree { n_features: x.n_cols(), nodes: b.nodes }
}

/// Fits a CART tree on all rows. Feature subsampling (when `max_features`
/// is set) draws from ChaCha8 seeded with `seed`.
pub fn tree_fit(x: &FeatureMatrix, y: &[f64], params: &TreeParams, seed: u64) -> Result<DecisionTree> {
    check_xy(x, y)?;
    if params.min_samples_leaf == 0 {
        return Err(Error::InvalidParam("min_samples_leaf must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..y.len()).collect();
    let mut r = rng::seeded(seed);
    Ok(fit_on(x, y, &mut idx, Objective::Sse, params, None, Some(&mut r)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestParams {
    /// 100 trees, 4 candidate features per split, depth 30.
    pub fn tuned() -> Self {
        Self {
            n_estimators: 100,
            max_features: Some(4),
            max_depth: Some(30),
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 42,
        }
    }
}

impl Default for ForestParams {
    fn default() -> Self {
        Self::tuned()
    }
}

/// Bagged ensemble; the prediction is the mean of its trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub trees: Vec<DecisionTree>,
}

/// Fits `n_estimators` trees in parallel. Tree `b` draws its bootstrap
/// sample and feature subsets from `rng::substream(seed, b)`, so the result
/// does not depend on thread scheduling.
pub fn rf_fit(x: &FeatureMatrix, y: &[f64], params: &ForestParams) -> Result<Forest> {
    check_xy(x, y)?;
    if params.n_estimators == 0 {
        return Err(Error::InvalidParam("forest needs at least one tree".into()));
    }
    if params.min_samples_leaf == 0 {
        return Err(Error::InvalidParam("min_samples_leaf must be at least 1".into()));
    }
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: params.max_features,
    };
    let n = y.len();
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(params.seed, b as u64);
            let mut idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_on(x, y, &mut idx, Objective::Sse, &tree_params, None, Some(&mut r))
        })
        .collect();
    Ok(Forest { params: params.clone(), trees })
}

impl Predictor for Forest {
    fn n_inputs(&self) -> usize {
        self.trees.first().map_or(0, |t| t.n_features)
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.evaluate(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub gamma: f64,
    pub colsample_bytree: f64,
    pub min_child_weight: f64,
    pub reg_lambda: f64,
    pub reg_alpha: f64,
    pub seed: u64,
}

impl BoostParams {
    /// 600 stages, eta 0.01, depth 9, gamma 0.3, full column sampling.
    pub fn tuned() -> Self {
        Self {
            n_estimators: 600,
            learning_rate: 0.01,
            max_depth: Some(9),
            gamma: 0.3,
            colsample_bytree: 1.0,
            min_child_weight: 1.0,
            reg_lambda: 1.0,
            reg_alpha: 0.0,
            seed: 42,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParam(format!("learning rate {} outside (0, 1]", self.learning_rate)));
        }
        if self.n_estimators == 0 {
            return Err(Error::InvalidParam("boosting needs at least one stage".into()));
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return Err(Error::InvalidParam(format!("colsample_bytree {} outside (0, 1]", self.colsample_bytree)));
        }
        if self.gamma < 0.0 || self.min_child_weight < 0.0 || self.reg_lambda < 0.0 || self.reg_alpha < 0.0 {
            return Err(Error::InvalidParam("gamma, min_child_weight and regularization must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for BoostParams {
    fn default() -> Self {
        Self::tuned()
    }
}

/// `base_score + learning_rate * sum of stage trees`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub params: BoostParams,
    #[serde(with = "decimal_string")]
    pub base_score: f64,
    pub trees: Vec<DecisionTree>,
}

pub fn gbm_fit(x: &FeatureMatrix, y: &[f64], params: &BoostParams) -> Result<BoostedEnsemble> {
    gbm_fit_traced(x, y, params).map(|(m, _)| m)
}

/// Fits a boosted ensemble under squared loss and also returns the training
/// MSE after each stage.
pub fn gbm_fit_traced(x: &FeatureMatrix, y: &[f64], params: &BoostParams) -> Result<(BoostedEnsemble, Vec<f64>)> {
    check_xy(x, y)?;
    params.validate()?;
    let n = y.len();
    let d = x.n_cols();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let tree_params = TreeParams { max_depth: params.max_depth, min_samples_leaf: 1, max_features: None };
    let objective = Objective::Boost {
        lambda: params.reg_lambda,
        alpha: params.reg_alpha,
        gamma: params.gamma,
        min_child_weight: params.min_child_weight,
    };
    let n_cols = ((params.colsample_bytree * d as f64).round() as usize).clamp(1, d);

    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut trace = Vec::with_capacity(params.n_estimators);
    for stage in 0..params.n_estimators {
        for i in 0..n {
            grad[i] = pred[i] - y[i];
        }
        let allowed: Vec<usize> = if n_cols < d {
            let mut r = rng::substream(params.seed, stage as u64);
            let mut cols = sample(&mut r, d, n_cols).into_vec();
            cols.sort_unstable();
            cols
        } else {
            (0..d).collect()
        };
        let mut idx: Vec<usize> = (0..n).collect();
        let tree = fit_on(x, &grad, &mut idx, objective, &tree_params, Some(&allowed), None);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.evaluate(x.row(i));
        }
        let mse = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
        if !mse.is_finite() {
            return Err(Error::Diverged { stage, loss: mse });
        }
        trace.push(mse);
        trees.push(tree);
    }
    Ok((BoostedEnsemble { params: params.clone(), base_score, trees }, trace))
}

impl Predictor for BoostedEnsemble {
    fn n_inputs(&self) -> usize {
        self.trees.first().map_or(0, |t| t.n_features)
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.evaluate(x)).sum();
        self.base_score + self.params.learning_rate * sum
    }
}
