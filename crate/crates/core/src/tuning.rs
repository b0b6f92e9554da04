//! Randomized hyperparameter search and grouped cross-validation.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::metrics::r2_score;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRange {
    /// Inclusive integer range.
    Int { lo: i64, hi: i64 },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Choice(Vec<f64>),
}

impl ParamRange {
    fn draw(&self, r: &mut rng::Rng) -> Result<f64> {
        Ok(match self {
            ParamRange::Int { lo, hi } if lo <= hi => r.random_range(*lo..=*hi) as f64,
            ParamRange::Uniform { lo, hi } if lo < hi => r.random_range(*lo..*hi),
            ParamRange::LogUniform { lo, hi } if 0.0 < *lo && lo < hi => r.random_range(lo.ln()..hi.ln()).exp(),
            ParamRange::Choice(v) if !v.is_empty() => v[r.random_range(0..v.len())],
            other => return Err(Error::InvalidParam(format!("empty search range {other:?}"))),
        })
    }
}

pub type ParamSet = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: ParamSet,
    pub score: f64,
}

/// Draws `n_iter` parameter sets from ChaCha8(`seed`) and scores each with
/// `objective` (higher is better). Draws happen up front so the result does
/// not depend on evaluation order; trials come back best first, ties in
/// draw order.
pub fn random_search<F>(space: &BTreeMap<String, ParamRange>, n_iter: usize, seed: u64, objective: F) -> Result<Vec<Trial>>
where
    F: Fn(&ParamSet) -> Result<f64> + Sync,
{
    let mut r = rng::seeded(seed);
    let draws: Vec<ParamSet> = (0..n_iter)
        .map(|_| space.iter().map(|(k, range)| Ok((k.clone(), range.draw(&mut r)?))).collect::<Result<ParamSet>>())
        .collect::<Result<_>>()?;
    let mut trials: Vec<Trial> = draws
        .into_par_iter()
        .map(|params| objective(&params).map(|score| Trial { params, score }))
        .collect::<Result<_>>()?;
    trials.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(trials)
}

/// Mean held-out R² over folds given as groups of row indices. Each fold is
/// predicted by a model fitted on the remaining rows.
pub fn cross_validate<F>(folds: &[Vec<usize>], x: &FeatureMatrix, y: &[f64], fit_predict: F) -> Result<f64>
where
    F: Fn(&FeatureMatrix, &[f64], &FeatureMatrix) -> Result<Vec<f64>> + Sync,
{
    if folds.len() < 2 {
        return Err(Error::InvalidParam("cross-validation needs at least two folds".into()));
    }
    let scores: Vec<f64> = folds
        .par_iter()
        .enumerate()
        .map(|(f, held)| {
            let train: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let yte: Vec<f64> = held.iter().map(|&i| y[i]).collect();
            let pred = fit_predict(&x.select_rows(&train), &ytr, &x.select_rows(held))?;
            r2_score(&yte, &pred)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn search_is_seeded_and_sorted() {
        let mut space = BTreeMap::new();
        space.insert("a".to_string(), ParamRange::Uniform { lo: -1.0, hi: 1.0 });
        space.insert("n".to_string(), ParamRange::Int { lo: 1, hi: 5 });
        let obj = |p: &ParamSet| Ok(-p["a"].powi(2));
        let t1 = random_search(&space, 20, 3, obj).unwrap();
        let t2 = random_search(&space, 20, 3, obj).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(t1.iter().all(|t| (1.0..=5.0).contains(&t.params["n"])));
    }

    #[test]
    fn cross_validation_of_perfect_model() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..20).map(|i| 2.0 * i as f64).collect();
        let folds: Vec<Vec<usize>> = (0..4).map(|f| (0..20).filter(|i| i % 4 == f).collect()).collect();
        let score = cross_validate(&folds, &x, &y, |_, _, xt| Ok(xt.rows().map(|r| 2.0 * r[0]).collect())).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
    }
}
