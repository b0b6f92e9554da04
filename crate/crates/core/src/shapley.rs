//! Exact Shapley attributions by enumerating every coalition.
//!
//! The value of a coalition `S` at instance `x` is the interventional mean
//! `F(S) = mean_b f(z)`, with `z_i = x_i` for `i in S` and `z_i = b_i`
//! otherwise, over the rows `b` of a background set.

use num_rational::Ratio;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng;

/// Enumeration is refused above this many features.
pub const MAX_EXACT_FEATURES: usize = 15;

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundSet {
    rows: FeatureMatrix,
}

impl BackgroundSet {
    pub fn new(rows: FeatureMatrix) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyBackground);
        }
        Ok(Self { rows })
    }

    /// At most `size` rows drawn without replacement from ChaCha8(`seed`),
    /// kept in their original order.
    pub fn subsample(rows: &FeatureMatrix, size: usize, seed: u64) -> Result<Self> {
        if rows.n_rows() <= size {
            return Self::new(rows.clone());
        }
        let mut idx = sample(&mut rng::seeded(seed), rows.n_rows(), size).into_vec();
        idx.sort_unstable();
        Self::new(rows.select_rows(&idx))
    }

    pub fn rows(&self) -> &FeatureMatrix {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Exact weights `s! (q - s - 1)! / q!` for `s = 0..q`, as reduced
/// rationals. Exact in `u128` for every `q <= MAX_EXACT_FEATURES`.
pub fn shapley_weights_exact(q: usize) -> Vec<Ratio<u128>> {
    let factorial = |n: usize| (1..=n as u128).product::<u128>();
    (0..q).map(|s| Ratio::new(factorial(s) * factorial(q - s - 1), factorial(q))).collect()
}

/// Exact weights rounded once to `f64`. Numerator and denominator are
/// integers below 2^53, so the single division is correctly rounded.
pub fn shapley_weights(q: usize) -> Vec<f64> {
    shapley_weights_exact(q).iter().map(|w| *w.numer() as f64 / *w.denom() as f64).collect()
}

/// `F(S)` for the coalition encoded by bit `i` of `mask` = feature `i`.
pub fn coalition_value<P: Predictor + ?Sized>(model: &P, x: &[f64], mask: u64, bg: &BackgroundSet) -> Result<f64> {
    if bg.is_empty() {
        return Err(Error::EmptyBackground);
    }
    let q = x.len();
    if q != model.n_inputs() || bg.rows.n_cols() != q {
        return Err(Error::DimensionMismatch { expected: model.n_inputs(), got: q });
    }
    Ok(coalition_mean(model, x, mask, bg))
}

fn coalition_mean<P: Predictor + ?Sized>(model: &P, x: &[f64], mask: u64, bg: &BackgroundSet) -> f64 {
    let mut z = vec![0.0; x.len()];
    let mut first = None;
    let mut all_equal = true;
    let mut sum = 0.0;
    for b in bg.rows.rows() {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = if mask >> i & 1 == 1 { x[i] } else { b[i] };
        }
        let v = model.predict_unchecked(&z);
        match first {
            None => first = Some(v),
            Some(f) => all_equal &= f == v,
        }
        sum += v;
    }
    // exact when every row agrees, so absent features contribute exactly zero
    match first {
        Some(f) if all_equal => f,
        _ => sum / bg.len() as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub key: String,
    /// Mean prediction over the background.
    pub base: f64,
    pub phi: Vec<f64>,
    /// Model output at the instance.
    pub fx: f64,
    /// The instance itself, for summary exports.
    pub x: Vec<f64>,
}

impl ShapExplanation {
    /// `|base + Σ phi - fx|`.
    pub fn efficiency_gap(&self) -> f64 {
        (self.base + self.phi.iter().sum::<f64>() - self.fx).abs()
    }
}

/// Exact Shapley values at `x`. All `2^q` coalition values are evaluated
/// once, in parallel, and combined with exact weights.
pub fn shap_exact<P: Predictor + ?Sized>(model: &P, x: &[f64], bg: &BackgroundSet, key: impl Into<String>) -> Result<ShapExplanation> {
    let q = x.len();
    if q > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures(q));
    }
    if bg.is_empty() {
        return Err(Error::EmptyBackground);
    }
    if q != model.n_inputs() || bg.rows.n_cols() != q {
        return Err(Error::DimensionMismatch { expected: model.n_inputs(), got: q });
    }
    let n_masks = 1u64 << q;
    let values: Vec<f64> = (0..n_masks).into_par_iter().map(|m| coalition_mean(model, x, m, bg)).collect();
    let weights = shapley_weights(q);
    let mut phi = vec![0.0; q];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        let mut acc = 0.0;
        for m in (0..n_masks).filter(|m| m & bit == 0) {
            acc += weights[m.count_ones() as usize] * (values[(m | bit) as usize] - values[m as usize]);
        }
        *p = acc;
    }
    Ok(ShapExplanation { key: key.into(), base: values[0], phi, fx: values[(n_masks - 1) as usize], x: x.to_vec() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub feature: usize,
    pub mean_abs: f64,
    /// `None` when every attribution is zero.
    pub percent: Option<f64>,
}

/// Mean |φ_i| per feature as a share of the total, sorted by decreasing
/// share with ties broken by feature index.
pub fn shap_global(explanations: &[ShapExplanation]) -> Result<Vec<GlobalImportance>> {
    let first = explanations.first().ok_or(Error::EmptyData)?;
    let q = first.phi.len();
    let n = explanations.len() as f64;
    let mut mean_abs = vec![0.0; q];
    for e in explanations {
        if e.phi.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: e.phi.len() });
        }
        for (m, p) in mean_abs.iter_mut().zip(&e.phi) {
            *m += p.abs() / n;
        }
    }
    let total: f64 = mean_abs.iter().sum();
    let mut out: Vec<GlobalImportance> = mean_abs
        .iter()
        .enumerate()
        .map(|(i, &m)| GlobalImportance { feature: i, mean_abs: m, percent: (total > 0.0).then(|| 100.0 * m / total) })
        .collect();
    out.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs).then(a.feature.cmp(&b.feature)));
    Ok(out)
}

/// Average-linkage agglomerative clustering of the attribution vectors under
/// Euclidean distance; returns the leaf order of the resulting dendrogram.
/// Merges pick the closest pair, ties going to the lowest cluster ids, and
/// the lower-id cluster is placed first.
pub fn cluster_order(explanations: &[ShapExplanation]) -> Vec<usize> {
    let n = explanations.len();
    if n == 0 {
        return vec![];
    }
    let dist = |a: usize, b: usize| -> f64 {
        explanations[a].phi.iter().zip(&explanations[b].phi).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
    };
    let d0: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dist(i, j)).collect()).collect();
    // clusters as (members in leaf order); linkage recomputed from d0
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let linkage = |a: &[usize], b: &[usize]| -> f64 {
        let s: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| d0[i][j]).sum();
        s / (a.len() * b.len()) as f64
    };
    for _ in 1..n {
        let live: Vec<usize> = (0..clusters.len()).filter(|&i| clusters[i].is_some()).collect();
        let mut best = (f64::INFINITY, 0, 0);
        for (ai, &a) in live.iter().enumerate() {
            for &b in &live[ai + 1..] {
                let d = linkage(clusters[a].as_ref().unwrap(), clusters[b].as_ref().unwrap());
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let mut merged = clusters[a].take().unwrap();
        merged.extend(clusters[b].take().unwrap());
        clusters.push(Some(merged));
    }
    clusters.into_iter().flatten().next().unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    Summary,
    Heatmap,
}

/// CSV text for the chosen export.
///
/// Summary: `rank,feature,instance,shap_value,feature_value`, one row per
/// (feature, instance) with features in global rank order.
///
/// Heatmap: one row per feature (in rank order) and one column per instance
/// in clustered order, then an `f(x)` row, then a `global_importance` block
/// of `feature,mean_abs_shap,percent`.
pub fn shap_export(explanations: &[ShapExplanation], names: &[String], mode: ExportMode) -> Result<String> {
    let global = shap_global(explanations)?;
    let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("x{}", i + 1));
    let mut out = String::new();
    match mode {
        ExportMode::Summary => {
            out.push_str("rank,feature,instance,shap_value,feature_value\n");
            for (rank, g) in global.iter().enumerate() {
                for e in explanations {
                    out.push_str(&format!("{},{},{},{},{}\n", rank + 1, name(g.feature), e.key, e.phi[g.feature], e.x[g.feature]));
                }
            }
        }
        ExportMode::Heatmap => {
            let order = cluster_order(explanations);
            out.push_str("feature");
            for &i in &order {
                out.push_str(&format!(",{}", explanations[i].key));
            }
            out.push('\n');
            for g in &global {
                out.push_str(&name(g.feature));
                for &i in &order {
                    out.push_str(&format!(",{}", explanations[i].phi[g.feature]));
                }
                out.push('\n');
            }
            out.push_str("f(x)");
            for &i in &order {
                out.push_str(&format!(",{}", explanations[i].fx));
            }
            out.push_str("\n\n# global_importance\nfeature,mean_abs_shap,percent\n");
            for g in &global {
                let pct = g.percent.map(|p| p.to_string()).unwrap_or_else(|| "undefined".into());
                out.push_str(&format!("{},{},{}\n", name(g.feature), g.mean_abs, pct));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;

    fn bg(rows: &[Vec<f64>]) -> BackgroundSet {
        BackgroundSet::new(FeatureMatrix::from_rows(rows).unwrap()).unwrap()
    }

    fn linear(coef: &[f64], intercept: f64) -> LinearModel {
        LinearModel { coef: coef.to_vec(), intercept }
    }

    #[test]
    fn linear_two_feature_example() {
        let f = linear(&[2.0, 3.0], 0.0);
        let b = bg(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let e = shap_exact(&f, &[1.0, 0.0], &b, "a").unwrap();
        assert_eq!(e.phi, vec![1.0, -1.5]);
        assert_eq!(e.base, 2.5);
        assert_eq!(e.fx, 2.0);
        assert!(e.efficiency_gap() < 1e-12);
    }

    #[test]
    fn coalition_extremes() {
        let f = linear(&[1.0, -2.0, 0.5], 0.3);
        let b = bg(&[vec![0.2, 0.4, 0.9]]);
        let x = [0.7, 0.1, 0.3];
        assert_eq!(coalition_value(&f, &x, 0b111, &b).unwrap(), f.predict_unchecked(&x));
        assert_eq!(coalition_value(&f, &x, 0, &b).unwrap(), f.predict_unchecked(&[0.2, 0.4, 0.9]));
        // x on {1, 3}, background elsewhere
        let mixed = 0.3 + 0.7 - 2.0 * 0.4 + 0.5 * 0.3;
        assert!((coalition_value(&f, &x, 0b101, &b).unwrap() - mixed).abs() < 1e-15);
    }

    #[test]
    fn dummy_and_symmetry_axioms() {
        let c = linear(&[0.0, 0.0, 0.0], 4.0);
        let b = bg(&[vec![0.1, 0.5, 0.9], vec![0.3, 0.2, 0.6]]);
        let e = shap_exact(&c, &[0.9, 0.9, 0.9], &b, "c").unwrap();
        assert!(e.phi.iter().all(|p| *p == 0.0));

        let s = linear(&[1.0, 1.0], 0.0);
        let e = shap_exact(&s, &[1.0, 1.0], &bg(&[vec![0.0, 0.0]]), "s").unwrap();
        assert_eq!(e.phi, vec![1.0, 1.0]);
    }

    #[test]
    fn guards() {
        let f = linear(&[1.0; 16], 0.0);
        let b = bg(&[vec![0.0; 16]]);
        assert!(matches!(shap_exact(&f, &[0.0; 16], &b, "k"), Err(Error::TooManyFeatures(16))));
        assert!(matches!(BackgroundSet::new(FeatureMatrix::new(2)), Err(Error::EmptyBackground)));
    }

    #[test]
    fn weights_are_exact_for_small_q() {
        for q in 1..=12usize {
            let w = shapley_weights_exact(q);
            // each size-s subset of the other q - 1 features has weight w[s]
            let binom = |n: u128, k: u128| (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1));
            let total: Ratio<u128> = (0..q).map(|s| w[s] * Ratio::from_integer(binom(q as u128 - 1, s as u128))).sum();
            assert_eq!(total, Ratio::from_integer(1));
        }
    }

    #[test]
    fn global_shares_and_degenerate_case() {
        let mk = |phi: Vec<f64>| ShapExplanation { key: "k".into(), base: 0.0, fx: phi.iter().sum(), x: vec![0.0; phi.len()], phi };
        let g = shap_global(&[mk(vec![2.0, -2.0, 0.0])]).unwrap();
        assert_eq!(g.iter().map(|x| x.feature).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(g.iter().map(|x| x.percent.unwrap()).collect::<Vec<_>>(), vec![50.0, 50.0, 0.0]);
        let z = shap_global(&[mk(vec![0.0, 0.0])]).unwrap();
        assert!(z.iter().all(|x| x.percent.is_none()));
        assert!(shap_export(&[mk(vec![0.0, 0.0])], &[], ExportMode::Heatmap).unwrap().contains("undefined"));
    }

    #[test]
    fn export_shapes() {
        let f = linear(&[0.5, 1.0, -1.0, 0.2, 0.0, 0.0, 0.1, 0.3, -0.4, 2.0], 0.0);
        let b = bg(&[vec![0.5; 10]]);
        let e = shap_exact(&f, &[0.1; 10], &b, "only").unwrap();
        let summary = shap_export(std::slice::from_ref(&e), &[], ExportMode::Summary).unwrap();
        assert_eq!(summary.lines().count(), 1 + 10);
        let es: Vec<ShapExplanation> = (0..4)
            .map(|i| shap_exact(&f, &[0.1 * i as f64; 10], &b, format!("i{i}")).unwrap())
            .collect();
        let heat = shap_export(&es, &[], ExportMode::Heatmap).unwrap();
        assert!(heat.lines().take(12).all(|l| l.split(',').count() == 1 + es.len()));
    }

    #[test]
    fn identical_explanations_cluster_adjacently() {
        let mk = |k: &str, phi: Vec<f64>| ShapExplanation { key: k.into(), base: 0.0, fx: 0.0, x: vec![0.0; 2], phi };
        let es = vec![mk("a", vec![1.0, 0.0]), mk("b", vec![5.0, 5.0]), mk("c", vec![1.0, 0.0]), mk("d", vec![5.1, 5.0])];
        let order = cluster_order(&es);
        let pos = |i: usize| order.iter().position(|&o| o == i).unwrap();
        assert_eq!(pos(0).abs_diff(pos(2)), 1);
        assert_eq!(pos(1).abs_diff(pos(3)), 1);
    }
}
