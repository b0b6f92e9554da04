//! Regression metrics, quantile pairing and per-group breakdowns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the truth is constant and R² is undefined.
    pub r2: Option<f64>,
}

fn check_lengths(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.is_empty() {
        return Err(Error::EmptyData);
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch { expected: y_true.len(), got: y_pred.len() });
    }
    Ok(())
}

/// `1 - SSE / SST` with SST taken about the mean of `y_true`.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let sst: f64 = y_true.iter().map(|t| (t - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::ConstantTruth);
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    let mse = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / y_true.len() as f64;
    Ok(mse.sqrt())
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    Ok(y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / y_true.len() as f64)
}

/// RMSE, MAE and R². A constant truth leaves `r2` empty instead of failing.
pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricSet> {
    let rmse = rmse(y_true, y_pred)?;
    let mae = mae(y_true, y_pred)?;
    let r2 = match r2_score(y_true, y_pred) {
        Ok(v) => Some(v),
        Err(Error::ConstantTruth) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricSet { rmse, mae, r2 })
}

/// Empirical quantile of an ascending sample by linear interpolation between
/// order statistics: `h = (n - 1) p`, `q = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h])`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub probability: f64,
    pub observed: f64,
    pub predicted: f64,
}

/// Matched quantiles at `p_k = k / (n - 1)`, `k = 0..n`.
pub fn quantile_compare(y_true: &[f64], y_pred: &[f64], n_quantiles: usize) -> Result<Vec<QuantilePair>> {
    if n_quantiles < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 quantiles, got {n_quantiles}")));
    }
    if y_true.is_empty() || y_pred.is_empty() {
        return Err(Error::EmptyData);
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (t, p) = (sorted(y_true), sorted(y_pred));
    Ok((0..n_quantiles)
        .map(|k| {
            let prob = k as f64 / (n_quantiles - 1) as f64;
            QuantilePair { probability: prob, observed: quantile_sorted(&t, prob), predicted: quantile_sorted(&p, prob) }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub model: String,
    pub n: usize,
    pub metrics: MetricSet,
    pub best_r2: bool,
    pub best_rmse: bool,
}

/// One row per (group, model) in group order then model order. Within a
/// group every model attaining the best R² (or RMSE) exactly is flagged, so
/// identical predictions share the mark.
pub fn per_group_metrics(groups: &[String], y_true: &[f64], models: &[(String, Vec<f64>)]) -> Result<Vec<GroupMetrics>> {
    if groups.len() != y_true.len() {
        return Err(Error::DimensionMismatch { expected: y_true.len(), got: groups.len() });
    }
    let mut index: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        index.entry(g.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (group, rows) in index {
        let truth: Vec<f64> = rows.iter().map(|&i| y_true[i]).collect();
        let start = out.len();
        for (name, pred) in models {
            if pred.len() != y_true.len() {
                return Err(Error::DimensionMismatch { expected: y_true.len(), got: pred.len() });
            }
            let p: Vec<f64> = rows.iter().map(|&i| pred[i]).collect();
            out.push(GroupMetrics {
                group: group.to_string(),
                model: name.clone(),
                n: rows.len(),
                metrics: metrics(&truth, &p)?,
                best_r2: false,
                best_rmse: false,
            });
        }
        let block = &mut out[start..];
        let best_r2 = block.iter().filter_map(|g| g.metrics.r2).fold(f64::NEG_INFINITY, f64::max);
        let best_rmse = block.iter().map(|g| g.metrics.rmse).fold(f64::INFINITY, f64::min);
        for g in block.iter_mut() {
            g.best_r2 = g.metrics.r2 == Some(best_r2);
            g.best_rmse = g.metrics.rmse == best_rmse;
        }
    }
    Ok(out)
}

/// Relative half-width of the reference band drawn around the 1:1 line in
/// observed-versus-predicted scatter exports.
pub const SCATTER_BAND: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub observed: f64,
    pub predicted: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn scatter_rows(y_true: &[f64], y_pred: &[f64]) -> Result<Vec<ScatterRow>> {
    check_lengths(y_true, y_pred)?;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(&o, &p)| ScatterRow {
            observed: o,
            predicted: p,
            lower: o - SCATTER_BAND * o.abs(),
            upper: o + SCATTER_BAND * o.abs(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = [1.0, 2.0, 4.0];
        assert_eq!(metrics(&y, &y).unwrap(), MetricSet { rmse: 0.0, mae: 0.0, r2: Some(1.0) });
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let y = [1.0, 2.0, 6.0];
        assert!(r2_score(&y, &[3.0; 3]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn constant_truth() {
        let m = metrics(&[0.0; 4], &[1.0; 4]).unwrap();
        assert_eq!((m.rmse, m.mae, m.r2), (1.0, 1.0, None));
        assert!(matches!(r2_score(&[0.0; 4], &[1.0; 4]), Err(Error::ConstantTruth)));
    }

    #[test]
    fn quantile_rule() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
        let q = quantile_compare(&[3.0, 1.0, 2.0], &[5.0, 4.0, 6.0], 2).unwrap();
        assert_eq!((q[0].observed, q[0].predicted), (1.0, 4.0));
        assert_eq!((q[1].observed, q[1].predicted), (3.0, 6.0));
        assert!(quantile_compare(&[1.0], &[1.0], 1).is_err());
    }

    #[test]
    fn quantile_shift() {
        let y = [0.3, 1.7, 2.2, 9.1, 4.4];
        let shifted: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
        for q in quantile_compare(&y, &shifted, 7).unwrap() {
            assert!((q.predicted - q.observed - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_ties_are_all_flagged() {
        let groups: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let y = [1.0, 2.0, 3.0, 5.0];
        let p = vec![1.1, 2.1, 3.0, 4.0];
        let models = vec![("m1".to_string(), p.clone()), ("m2".to_string(), p)];
        let rows = per_group_metrics(&groups, &y, &models).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.best_r2 && r.best_rmse));
        let single = per_group_metrics(&groups[..2], &y[..2], &[("m".into(), vec![1.0, 2.0])]).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn scatter_band() {
        let r = scatter_rows(&[10.0], &[9.5]).unwrap();
        assert_eq!((r[0].lower, r[0].upper), (9.0, 11.0));
    }
}
