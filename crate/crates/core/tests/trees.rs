//! Greedy tree growth against exhaustive split enumeration, plus ensemble
//! properties.

use proptest::prelude::*;
use rwtkan::trees::{gbm_fit_traced, rf_fit, tree_fit, BoostParams, DecisionTree, ForestParams, Node, TreeParams, TIE_RTOL};
use rwtkan::{FeatureMatrix, Predictor};

/// Reference tree built by brute force: every (feature, cut) pair is scored
/// by recomputing both children's sums of squares from scratch.
#[derive(Debug, PartialEq)]
enum Oracle {
    Leaf(f64),
    Split(usize, f64, Box<Oracle>, Box<Oracle>),
}

fn sse(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| (a - m).powi(2)).sum()
}

fn oracle(rows: &[Vec<f64>], y: &[f64]) -> Oracle {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let parent = sse(y);
    let d = rows[0].len();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..d {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let cut = w[0] + (w[1] - w[0]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| rows[i][f] <= cut);
            let yl: Vec<f64> = l.iter().map(|&i| y[i]).collect();
            let yr: Vec<f64> = r.iter().map(|&i| y[i]).collect();
            let gain = parent - sse(&yl) - sse(&yr);
            if gain <= 1e-12 * parent {
                continue;
            }
            // a later candidate must be better beyond the tie tolerance
            let wins = match best {
                None => true,
                Some((_, _, g)) => gain > g + TIE_RTOL * gain.abs().max(g.abs()),
            };
            if wins {
                best = Some((f, cut, gain));
            }
        }
    }
    match best {
        None => Oracle::Leaf(mean),
        Some((f, cut, _)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| rows[i][f] <= cut);
            let pick = |ix: &[usize]| (ix.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>(), ix.iter().map(|&i| y[i]).collect::<Vec<_>>());
            let (lr, ly) = pick(&l);
            let (rr, ry) = pick(&r);
            Oracle::Split(f, cut, Box::new(oracle(&lr, &ly)), Box::new(oracle(&rr, &ry)))
        }
    }
}

fn same_structure(tree: &DecisionTree, id: usize, o: &Oracle) -> bool {
    match (&tree.nodes[id], o) {
        (Node::Leaf { value, .. }, Oracle::Leaf(v)) => (value - v).abs() <= 1e-12 * v.abs().max(1.0),
        (Node::Split { feature, threshold, left, right }, Oracle::Split(f, c, l, r)) => {
            feature == f && threshold == c && same_structure(tree, *left, l) && same_structure(tree, *right, r)
        }
        _ => false,
    }
}

fn small_dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..=3, 1usize..=8).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(prop::collection::vec((0u8..4).prop_map(|v| v as f64 / 4.0), d), n),
            prop::collection::vec((0u8..5).prop_map(f64::from), n),
        )
    })
}

proptest! {
    #[test]
    fn greedy_matches_exhaustive((rows, y) in small_dataset()) {
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let tree = tree_fit(&x, &y, &TreeParams::default(), 0).unwrap();
        let o = oracle(&rows, &y);
        prop_assert!(same_structure(&tree, 0, &o), "{tree:?}\n{o:?}");
    }

    #[test]
    fn boosting_is_monotone_without_gamma(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| r.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|v| (6.0 * v[0]).sin() + v[1] * v[2]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let params = BoostParams { n_estimators: 80, gamma: 0.0, learning_rate: 0.3, max_depth: Some(3), ..BoostParams::tuned() };
        let (_, trace) = gbm_fit_traced(&x, &y, &params).unwrap();
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn forest_predictions_stay_within_target_range() {
    let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0, ((i * 7) % 13) as f64]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 0.2 * r[1]).collect();
    let x = FeatureMatrix::from_rows(&rows).unwrap();
    let f = rf_fit(&x, &y, &ForestParams { n_estimators: 20, max_features: Some(1), ..ForestParams::tuned() }).unwrap();
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    for i in 0..100 {
        let p = f.predict(&[i as f64 / 80.0 - 0.1, (i % 17) as f64]).unwrap();
        assert!(p >= lo && p <= hi);
    }
    assert_eq!(f, rf_fit(&x, &y, &f.params).unwrap());
}
