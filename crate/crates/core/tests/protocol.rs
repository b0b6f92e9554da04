//! Property tests for scaling, splitting and metrics.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;
use rwtkan::data::ProfileKey;
use rwtkan::ingest::{kfold, split_profiles};
use rwtkan::metrics::{mae, metrics, quantile_compare, r2_score, rmse};
use rwtkan::{FeatureId, RawRow, Scaler, N_FEATURES};

fn keys_strategy() -> impl Strategy<Value = Vec<ProfileKey>> {
    prop::collection::btree_set((0u8..6, 0u32..60, 0u8..3), 2..40).prop_map(|set| {
        set.into_iter()
            .map(|(r, d, s)| ProfileKey {
                reservoir_id: format!("res{r}"),
                date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(d as i64),
                site_id: format!("s{s}"),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn scaler_round_trip(u in prop::array::uniform10(0.0f64..=1.0)) {
        let s = Scaler::table2_fixed();
        let raw = s.invert_row(&u);
        let back = s.apply(&raw).unwrap();
        prop_assert!(back.is_in_range() || back.x.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let again = s.invert_row(&back.x);
        for f in FeatureId::ALL {
            let (a, b) = (raw.require(f).unwrap(), again.require(f).unwrap());
            let bounds = s.bounds(f);
            let scale = a.abs().max(bounds.min.abs()).max(bounds.max.abs());
            prop_assert!((a - b).abs() <= 1e-12 * scale, "{f}: {a} vs {b}");
        }
    }

    #[test]
    fn scaling_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let s = Scaler::table2_fixed();
        for f in FeatureId::ALL {
            let (ra, rb) = (s.invert_feature(f, a), s.invert_feature(f, b));
            let mut row_a = RawRow::from_values([0.0; N_FEATURES]);
            let mut row_b = row_a.clone();
            row_a.set(f, ra);
            row_b.set(f, rb);
            let (xa, xb) = (s.apply(&row_a).unwrap().x[f.position()], s.apply(&row_b).unwrap().x[f.position()]);
            prop_assert_eq!(ra < rb, xa < xb);
        }
    }

    #[test]
    fn split_has_no_leakage(keys in keys_strategy(), ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let plan = split_profiles(&keys, ratio, seed).unwrap();
        let train: BTreeSet<_> = plan.train.iter().collect();
        let test: BTreeSet<_> = plan.test.iter().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), keys.len());
        prop_assert!(keys.iter().all(|k| train.contains(k) || test.contains(k)));
        let mut per_res: std::collections::BTreeMap<&str, (usize, usize)> = Default::default();
        for k in &keys {
            let e = per_res.entry(k.reservoir_id.as_str()).or_default();
            if plan.is_train(k) { e.0 += 1 } else { e.1 += 1 }
        }
        for (t, s) in per_res.values() {
            if t + s == 2 {
                prop_assert_eq!((*t, *s), (1, 1));
            }
        }
        prop_assert_eq!(plan, split_profiles(&keys, ratio, seed).unwrap());
    }

    #[test]
    fn folds_partition_training_keys(keys in keys_strategy(), k in 1usize..6, seed in any::<u64>()) {
        prop_assume!(keys.len() >= k);
        let folds = kfold(&keys, k, seed).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let all: BTreeSet<_> = folds.iter().flatten().collect();
        prop_assert_eq!(all.len(), keys.len());
    }

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
        let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (r, m) = (rmse(&t, &p).unwrap(), mae(&t, &p).unwrap());
        prop_assert!(r >= m * (1.0 - 1e-12) && m >= 0.0);
    }

    #[test]
    fn shift_invariance(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..64), c in -100.0f64..100.0) {
        let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(t.iter().any(|v| (v - t[0]).abs() > 1e-3));
        let ts: Vec<f64> = t.iter().map(|v| v + c).collect();
        let ps: Vec<f64> = p.iter().map(|v| v + c).collect();
        let (a, b) = (metrics(&t, &p).unwrap(), metrics(&ts, &ps).unwrap());
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9 * a.rmse.max(1.0));
        prop_assert!((a.mae - b.mae).abs() < 1e-9 * a.mae.max(1.0));
        prop_assert!((r2_score(&t, &p).unwrap() - r2_score(&ts, &ps).unwrap()).abs() < 1e-9);
        prop_assert!(a.r2.unwrap() <= 1.0);
    }

    #[test]
    fn self_quantiles_lie_on_diagonal(v in prop::collection::vec(-50.0f64..50.0, 1..80), n in 2usize..30) {
        for q in quantile_compare(&v, &v, n).unwrap() {
            prop_assert_eq!(q.observed, q.predicted);
        }
    }
}
