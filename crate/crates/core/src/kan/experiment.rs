use rand::RngCore as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{KanNetwork, DEFAULT_GRID};
use super::snap::{kan_snap, EdgeFit, Regime, SnapLibrary, SnapResult};
use super::train::{kan_train, KanTrainConfig};
use crate::data::{FeatureMatrix, Scaler};
use crate::error::{Error, Result};
use crate::ingest::{LabeledRow, SplitPlan};
use crate::metrics::r2_score;
use crate::model::Predictor;
use crate::rng;

/// Normalized train and test matrices sharing one column order.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train_x: FeatureMatrix,
    pub train_y: Vec<f64>,
    pub test_x: FeatureMatrix,
    pub test_y: Vec<f64>,
}

impl ExperimentData {
    /// Normalizes `rows` with `scaler` and routes each row by its profile's
    /// side of `plan`. Rows whose profile is in neither set are dropped.
    pub fn from_rows(rows: &[LabeledRow], plan: &SplitPlan, scaler: &Scaler) -> Result<Self> {
        let (mut trx, mut try_, mut tex, mut tey) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for r in rows {
            let fv = scaler.apply(&r.raw)?;
            let y = scaler.scale_target(r.temp_c);
            if plan.is_train(&r.key) {
                trx.push(fv.x.to_vec());
                try_.push(y);
            } else if plan.is_test(&r.key) {
                tex.push(fv.x.to_vec());
                tey.push(y);
            }
        }
        Ok(Self {
            train_x: FeatureMatrix::from_rows(&trx)?,
            train_y: try_,
            test_x: FeatureMatrix::from_rows(&tex)?,
            test_y: tey,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub grid: usize,
    pub train: KanTrainConfig,
    /// Rows of the training split used as the snap sample (all if larger).
    pub snap_rows: usize,
    /// Skip symbolic snapping, leaving the expression empty.
    pub snap: bool,
    /// Independent initialisations per fit; see [`kan_fit_snapped`].
    pub restarts: usize,
}

impl ExperimentConfig {
    pub fn new(regime: Regime) -> Self {
        Self { regime, grid: DEFAULT_GRID, train: KanTrainConfig::default(), snap_rows: 1000, snap: true, restarts: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub n_inputs: usize,
    pub regime: Regime,
    pub seed: u64,
    pub r2_train: f64,
    pub r2_test: f64,
    pub expression_text: String,
    pub snap_tolerance: Option<f64>,
    /// Test R² of the snapped expression itself.
    pub r2_test_snapped: Option<f64>,
    /// Which restart was kept.
    pub restart: usize,
    pub edge_report: Vec<EdgeFit>,
}

/// A trained network, its snapped form and how well that form fits.
#[derive(Clone, Debug)]
pub struct SnappedFit {
    pub net: KanNetwork,
    pub snap: Option<SnapResult>,
    pub restart: usize,
    /// Training MSE of the snapped expression, or of the network when
    /// snapping is off.
    pub selection_mse: f64,
}

/// Initialisation seed of restart `r`: `seed` itself for the first, then
/// draws from ChaCha stream `r` of `seed`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        rng::substream(seed, r as u64).next_u64()
    }
}

/// Trains `cfg.restarts` networks from independent initialisations and
/// keeps the one whose snapped expression has the lowest training MSE
/// (earliest restart on ties). Without snapping the network's own training
/// MSE decides. Two hidden nodes can share one input's effect through
/// curved edges that only sum to the true shape; such fits snap badly and
/// lose the comparison.
pub fn kan_fit_snapped(x: &FeatureMatrix, y: &[f64], seed: u64, cfg: &ExperimentConfig) -> Result<SnappedFit> {
    let restarts = cfg.restarts.max(1);
    let fits: Vec<SnappedFit> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let init_seed = restart_seed(seed, r);
            let net = KanNetwork::init(&cfg.regime.layout(x.n_cols()), cfg.grid, init_seed)?;
            let (net, _) = kan_train(&net, x, y, &KanTrainConfig { seed: init_seed, ..cfg.train.clone() })?;
            let (snap, selection_mse) = if cfg.snap {
                let n = x.n_rows().min(cfg.snap_rows.max(1));
                let sample = x.select_rows(&(0..n).collect::<Vec<_>>());
                let snapped = kan_snap(&net, &SnapLibrary::new(cfg.regime), &sample)?;
                let mse = expression_mse(&snapped.expression, x, y);
                (Some(snapped), mse)
            } else {
                (None, net.objective(x, y, 0.0).1)
            };
            Ok(SnappedFit { net, snap, restart: r, selection_mse })
        })
        .collect::<Result<_>>()?;
    let best = fits
        .into_iter()
        .reduce(|a, b| if b.selection_mse < a.selection_mse { b } else { a })
        .expect("at least one restart");
    Ok(best)
}

/// Mean squared error of `e` on `(x, y)`, infinite if any row fails.
fn expression_mse(e: &crate::expr::Expr, x: &FeatureMatrix, y: &[f64]) -> f64 {
    let mut sse = 0.0;
    for (row, t) in x.rows().zip(y) {
        match e.eval(row) {
            Ok(v) if v.is_finite() => sse += (v - t).powi(2),
            _ => return f64::INFINITY,
        }
    }
    sse / y.len() as f64
}

/// Trains one network per prefix `ordering[..k]`, `k = 1..=len`, for every
/// seed, evaluates it on the shared split and snaps it. Records come back
/// ordered by seed then prefix length. Variable `x_k` in each expression is
/// the `k`-th column of the ordering.
pub fn incremental_experiment(
    data: &ExperimentData,
    ordering: &[usize],
    seeds: &[u64],
    cfg: &ExperimentConfig,
) -> Result<Vec<ExperimentRecord>> {
    let n_cols = data.train_x.n_cols();
    let mut seen = vec![false; n_cols];
    for &c in ordering {
        if c >= n_cols || std::mem::replace(&mut seen[c], true) {
            return Err(Error::InvalidParam(format!("ordering {ordering:?} is not a permutation of available columns")));
        }
    }
    if ordering.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParam("empty ordering or seed list".into()));
    }
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (1..=ordering.len()).map(move |k| (s, k))).collect();
    jobs.par_iter().map(|&(seed, k)| run_prefix(data, &ordering[..k], seed, cfg)).collect()
}

fn run_prefix(data: &ExperimentData, cols: &[usize], seed: u64, cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let train_x = data.train_x.select_columns(cols);
    let test_x = data.test_x.select_columns(cols);
    let fit = kan_fit_snapped(&train_x, &data.train_y, seed, cfg)?;
    let net = &fit.net;
    let predict = |x: &FeatureMatrix| x.rows().map(|r| net.predict_unchecked(r)).collect::<Vec<_>>();
    let r2_train = r2_score(&data.train_y, &predict(&train_x))?;
    let r2_test = r2_score(&data.test_y, &predict(&test_x))?;
    let r2_test_snapped = match &fit.snap {
        Some(s) => {
            let pred: Option<Vec<f64>> = test_x.rows().map(|r| s.expression.eval(r).ok()).collect();
            pred.map(|p| r2_score(&data.test_y, &p)).transpose()?
        }
        None => None,
    };
    let (expression_text, snap_tolerance, edge_report) = match fit.snap {
        Some(s) => (s.expression.to_string(), Some(s.tolerance), s.edges),
        None => (String::new(), None, Vec::new()),
    };
    Ok(ExperimentRecord {
        n_inputs: cols.len(),
        regime: cfg.regime,
        seed,
        r2_train,
        r2_test,
        expression_text,
        snap_tolerance,
        r2_test_snapped,
        restart: fit.restart,
        edge_report,
    })
}
