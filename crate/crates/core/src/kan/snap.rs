//! Replacing trained edge functions with closed forms and composing them
//! into one expression.
//!
//! Every candidate is `c * g(u; θ) + d` where `u` maps the edge's reachable
//! input range onto `[0, 1]`. The shape parameters `θ` are found by a grid
//! search followed by a pattern-search refinement; `c` and `d` come from
//! ordinary least squares for each `θ`.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::KanNetwork;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::expr::{simplify, Expr, Func};
use crate::model::Predictor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Simple,
    Complex,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Simple => "simple",
            Regime::Complex => "complex",
        }
    }

    /// Hidden layout used for `n_inputs` inputs.
    pub fn layout(self, n_inputs: usize) -> Vec<usize> {
        match self {
            Regime::Simple => vec![n_inputs, 2, 1],
            Regime::Complex => vec![n_inputs, 3, 1],
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Regime::Simple),
            "complex" => Ok(Regime::Complex),
            other => Err(Error::InvalidParam(format!("unknown regime '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Constant,
    Linear,
    Inverse,
    InverseSquare,
    Cos,
    Tan,
    Tanh,
    Exp,
    Log,
    Square,
    Gaussian,
}

impl Family {
    pub const SIMPLE: [Family; 4] = [Family::Constant, Family::Linear, Family::Inverse, Family::InverseSquare];
    pub const COMPLEX: [Family; 11] = [
        Family::Constant,
        Family::Linear,
        Family::Inverse,
        Family::InverseSquare,
        Family::Cos,
        Family::Tan,
        Family::Tanh,
        Family::Exp,
        Family::Log,
        Family::Square,
        Family::Gaussian,
    ];

    /// Free parameters including the outer scale and offset.
    pub fn n_params(self) -> usize {
        match self {
            Family::Constant => 1,
            Family::Linear => 2,
            Family::Inverse | Family::InverseSquare | Family::Exp | Family::Log | Family::Square => 3,
            Family::Cos | Family::Tan | Family::Tanh | Family::Gaussian => 4,
        }
    }

    /// Shape function `g(u; θ)`, or `None` outside its validity domain.
    fn shape(self, u: f64, t: &[f64]) -> Option<f64> {
        let v = match self {
            Family::Constant => 0.0,
            Family::Linear => u,
            Family::Inverse => 1.0 / (u - t[0]),
            Family::InverseSquare => (u - t[0]).powi(-2),
            Family::Cos => (t[0] * u + t[1]).cos(),
            Family::Tan => (t[0] * u + t[1]).tan(),
            Family::Tanh => (t[0] * (u - t[1])).tanh(),
            Family::Exp => (t[0] * u).exp(),
            Family::Log => {
                let arg = t[1] * (u - t[0]);
                if arg <= 0.0 {
                    return None;
                }
                arg.ln()
            }
            Family::Square => (u - t[0]).powi(2),
            Family::Gaussian => (-t[0] * (u - t[1]).powi(2)).exp(),
        };
        v.is_finite().then_some(v)
    }

    /// Whether `θ` keeps every pole and domain edge outside the unit
    /// interval with a small margin.
    fn admissible(self, t: &[f64]) -> bool {
        const MARGIN: f64 = 0.01;
        let outside = |p: f64| p < -MARGIN || p > 1.0 + MARGIN;
        match self {
            Family::Inverse | Family::InverseSquare => outside(t[0]),
            Family::Log => outside(t[0]) && (t[1] == 1.0 && t[0] < 0.0 || t[1] == -1.0 && t[0] > 1.0),
            Family::Tan => {
                let (a, b) = (t[0], t[1]);
                let (lo, hi) = (b.min(a + b), b.max(a + b));
                lo > -FRAC_PI_2 + MARGIN && hi < FRAC_PI_2 - MARGIN
            }
            Family::Tanh | Family::Gaussian => t[0] > 0.0,
            Family::Exp => t[0] != 0.0 && t[0].abs() <= 50.0,
            _ => true,
        }
    }

    /// Starting grid for the shape parameters. Families with a discrete
    /// branch (the log direction) carry it as a fixed second parameter.
    fn seeds(self) -> Vec<Vec<f64>> {
        let logspace = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n).map(|k| (a.ln() + (b.ln() - a.ln()) * k as f64 / (n - 1) as f64).exp()).collect::<Vec<_>>()
        };
        let linspace = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect::<Vec<_>>()
        };
        let poles = || {
            let d = logspace(0.02, 100.0, 50);
            d.iter().map(|v| -v).chain(d.iter().map(|v| 1.0 + v)).collect::<Vec<_>>()
        };
        let mut out = Vec::new();
        match self {
            Family::Constant | Family::Linear => out.push(vec![]),
            Family::Inverse | Family::InverseSquare | Family::Square => {
                let ps = if self == Family::Square { linspace(-1.0, 2.0, 61) } else { poles() };
                out.extend(ps.into_iter().map(|p| vec![p]));
            }
            Family::Log => {
                for p in poles() {
                    out.push(vec![p, if p < 0.0 { 1.0 } else { -1.0 }]);
                }
            }
            Family::Cos => {
                for a in linspace(0.25, 4.0 * PI, 40) {
                    for b in linspace(-PI, PI, 37).into_iter().take(36) {
                        out.push(vec![a, b]);
                    }
                }
            }
            Family::Tan => {
                for a in linspace(-3.0, 3.0, 25) {
                    for b in linspace(-FRAC_PI_2 + 0.02, FRAC_PI_2 - 0.02, 25) {
                        out.push(vec![a, b]);
                    }
                }
            }
            Family::Tanh | Family::Gaussian => {
                for a in logspace(0.3, 40.0, 25) {
                    for m in linspace(-0.5, 1.5, 41) {
                        out.push(vec![a, m]);
                    }
                }
            }
            Family::Exp => {
                let mags = logspace(0.05, 20.0, 40);
                out.extend(mags.iter().map(|a| vec![*a]).chain(mags.iter().map(|a| vec![-a])));
            }
        }
        out.retain(|t| self.admissible(t));
        out
    }

    /// Number of leading shape parameters that the refinement may move.
    fn n_continuous(self) -> usize {
        match self {
            Family::Constant | Family::Linear => 0,
            Family::Inverse | Family::InverseSquare | Family::Square | Family::Exp | Family::Log => 1,
            Family::Cos | Family::Tan | Family::Tanh | Family::Gaussian => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapLibrary {
    pub regime: Regime,
    pub families: Vec<Family>,
    /// Subtracted from R² per free parameter when ranking candidates.
    pub complexity_penalty: f64,
    /// Edges whose best fit stays below this R² are reported as failures.
    pub min_r2: f64,
    /// Edges whose output standard deviation over the sample is below this
    /// fraction of the network output's standard deviation are constant.
    pub flat_tolerance: f64,
    /// Points sampled along each edge's reachable range.
    pub samples: usize,
    /// Significant digits kept in emitted constants.
    pub digits: usize,
}

impl SnapLibrary {
    pub fn new(regime: Regime) -> Self {
        let families = match regime {
            Regime::Simple => Family::SIMPLE.to_vec(),
            Regime::Complex => Family::COMPLEX.to_vec(),
        };
        Self { regime, families, complexity_penalty: 0.01, min_r2: 0.9, flat_tolerance: 1e-3, samples: 200, digits: 6 }
    }
}

/// Fit of one candidate to one edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeFit {
    pub layer: usize,
    pub from: usize,
    pub to: usize,
    pub family: Family,
    pub r2: f64,
    pub score: f64,
    pub shape: Vec<f64>,
    pub scale: f64,
    pub offset: f64,
    /// Reachable input range the fit covers.
    pub lo: f64,
    pub hi: f64,
    /// Standard deviation of the edge output over the sample.
    pub spread: f64,
    /// False when the edge feeds a node whose outgoing edges are all
    /// constant, so it cannot affect the output.
    pub used: bool,
    /// False when the best candidate missed the minimum R².
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapResult {
    pub expression: Expr,
    /// Largest |expression - network| over the snap sample; infinite if the
    /// expression could not be evaluated everywhere.
    pub tolerance: f64,
    pub edges: Vec<EdgeFit>,
    pub warnings: Vec<String>,
}

impl SnapResult {
    pub fn failures(&self) -> impl Iterator<Item = &EdgeFit> {
        self.edges.iter().filter(|e| !e.accepted)
    }
}

struct Candidate {
    shape: Vec<f64>,
    scale: f64,
    offset: f64,
    r2: f64,
}

/// Least-squares `c, d` for `v ≈ c g + d` and the resulting R².
fn fit_linear(g: &[f64], v: &[f64], sst: f64, mean_v: f64) -> Option<(f64, f64, f64)> {
    let n = g.len() as f64;
    let mean_g = g.iter().sum::<f64>() / n;
    let (mut sgg, mut sgv) = (0.0, 0.0);
    for (a, b) in g.iter().zip(v) {
        sgg += (a - mean_g) * (a - mean_g);
        sgv += (a - mean_g) * (b - mean_v);
    }
    if !(sgg > 1e-300) || !sgg.is_finite() {
        return None;
    }
    let c = sgv / sgg;
    let d = mean_v - c * mean_g;
    let sse: f64 = g.iter().zip(v).map(|(a, b)| (c * a + d - b).powi(2)).sum();
    Some((c, d, 1.0 - sse / sst))
}

fn evaluate_shape(family: Family, t: &[f64], us: &[f64], v: &[f64], sst: f64, mean_v: f64) -> Option<Candidate> {
    if !family.admissible(t) {
        return None;
    }
    let g: Option<Vec<f64>> = us.iter().map(|&u| family.shape(u, t)).collect();
    let (scale, offset, r2) = fit_linear(&g?, v, sst, mean_v)?;
    r2.is_finite().then(|| Candidate { shape: t.to_vec(), scale, offset, r2 })
}

fn best_candidate(family: Family, us: &[f64], v: &[f64], sst: f64, mean_v: f64) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for t in family.seeds() {
        if let Some(c) = evaluate_shape(family, &t, us, v, sst, mean_v) {
            if best.as_ref().is_none_or(|b| c.r2 > b.r2) {
                best = Some(c);
            }
        }
    }
    let mut best = best?;
    let k = family.n_continuous();
    if k == 0 {
        return Some(best);
    }
    let mut steps: Vec<f64> = best.shape[..k].iter().map(|p| 0.05 * p.abs().max(0.1)).collect();
    for _ in 0..60 {
        let mut improved = false;
        for i in 0..k {
            for dir in [1.0, -1.0] {
                let mut t = best.shape.clone();
                t[i] += dir * steps[i];
                if let Some(c) = evaluate_shape(family, &t, us, v, sst, mean_v) {
                    if c.r2 > best.r2 {
                        best = c;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
            if steps.iter().all(|s| *s < 1e-9) {
                break;
            }
        }
    }
    Some(best)
}

fn fit_edge(lib: &SnapLibrary, f: impl Fn(f64) -> f64, lo: f64, hi: f64, flat: bool) -> (Family, Candidate) {
    let m = lib.samples.max(8);
    let span = hi - lo;
    let us: Vec<f64> = (0..m).map(|k| k as f64 / (m - 1) as f64).collect();
    let v: Vec<f64> = us.iter().map(|&u| f(lo + span * u)).collect();
    let mean_v = v.iter().sum::<f64>() / m as f64;
    let sst: f64 = v.iter().map(|a| (a - mean_v).powi(2)).sum();
    let constant = || Candidate { shape: vec![], scale: 0.0, offset: mean_v, r2: 1.0 };
    if flat || span <= 1e-12 || sst <= 1e-300 {
        return (Family::Constant, constant());
    }
    let mut best: Option<(Family, Candidate, f64)> = None;
    for &family in &lib.families {
        let cand = if family == Family::Constant {
            Some(Candidate { r2: 0.0, ..constant() })
        } else {
            best_candidate(family, &us, &v, sst, mean_v)
        };
        if let Some(c) = cand {
            let score = c.r2 - lib.complexity_penalty * family.n_params() as f64;
            if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
                best = Some((family, c, score));
            }
        }
    }
    let (family, cand, _) = best.unwrap_or((Family::Constant, constant(), 0.0));
    (family, cand)
}

/// Builds `scale * g(u) + offset` with `u = (z - lo) / (hi - lo)`.
fn edge_expression(fit: &EdgeFit, z: &Expr, digits: usize) -> Expr {
    let k = |v: f64| Expr::constant_rounded(v, digits);
    let span = fit.hi - fit.lo;
    // alpha * u + beta as an affine function of z
    let affine = |alpha: f64, beta: f64| {
        Expr::add(Expr::mul(k(alpha / span), z.clone()), k(beta - alpha * fit.lo / span))
    };
    let t = &fit.shape;
    let g = match fit.family {
        Family::Constant => return k(fit.offset),
        Family::Linear => affine(1.0, 0.0),
        Family::Inverse => Expr::div(k(1.0), affine(1.0, -t[0])),
        Family::InverseSquare => Expr::div(k(1.0), Expr::pow(affine(1.0, -t[0]), 2)),
        Family::Cos => Expr::func(Func::Cos, affine(t[0], t[1])),
        Family::Tan => Expr::func(Func::Tan, affine(t[0], t[1])),
        Family::Tanh => Expr::func(Func::Tanh, affine(t[0], -t[0] * t[1])),
        Family::Exp => Expr::func(Func::Exp, affine(t[0], 0.0)),
        Family::Log => Expr::func(Func::Log, affine(t[1], -t[1] * t[0])),
        Family::Square => Expr::pow(affine(1.0, -t[0]), 2),
        Family::Gaussian => Expr::func(Func::Exp, Expr::neg(Expr::mul(k(t[0]), Expr::pow(affine(1.0, -t[1]), 2)))),
    };
    Expr::add(Expr::mul(k(fit.scale), g), k(fit.offset))
}

/// Snaps every edge of `net` to the best candidate in `lib` over the input
/// ranges reached by `sample`, composes the result and measures how far it
/// strays from the network on `sample`.
pub fn kan_snap(net: &KanNetwork, lib: &SnapLibrary, sample: &FeatureMatrix) -> Result<SnapResult> {
    if sample.is_empty() {
        return Err(Error::EmptyData);
    }
    if sample.n_cols() != net.n_inputs() {
        return Err(Error::DimensionMismatch { expected: net.n_inputs(), got: sample.n_cols() });
    }
    let nodes: Vec<Vec<Vec<f64>>> = sample.rows().map(|r| net.node_values(r)).collect();
    let n = nodes.len() as f64;
    let std_of = |v: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = v.collect();
        let mean = v.iter().sum::<f64>() / n;
        (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let out_std = std_of(&mut nodes.iter().map(|nd| nd.last().expect("output")[0]));
    let mut layers_fits: Vec<Vec<EdgeFit>> = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let ranges: Vec<(f64, f64)> = (0..layer.n_in)
            .map(|p| {
                nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), nd| (lo.min(nd[l][p]), hi.max(nd[l][p])))
            })
            .collect();
        let pairs: Vec<(usize, usize)> = (0..layer.n_out).flat_map(|q| (0..layer.n_in).map(move |p| (q, p))).collect();
        let fits: Vec<EdgeFit> = pairs
            .par_iter()
            .map(|&(q, p)| {
                let (lo, hi) = ranges[p];
                let edge = layer.edge(q, p);
                let spread = std_of(&mut nodes.iter().map(|nd| edge.eval(nd[l][p])));
                let flat = spread <= lib.flat_tolerance * out_std;
                let (family, c) = fit_edge(lib, |x| edge.eval(x), lo, hi, flat);
                let score = c.r2 - lib.complexity_penalty * family.n_params() as f64;
                EdgeFit {
                    layer: l,
                    from: p,
                    to: q,
                    family,
                    r2: c.r2,
                    score,
                    shape: c.shape,
                    scale: c.scale,
                    offset: c.offset,
                    lo,
                    hi,
                    spread,
                    used: true,
                    accepted: c.r2 >= lib.min_r2,
                }
            })
            .collect();
        layers_fits.push(fits);
    }
    // a hidden node whose outgoing edges are all constant hides its inputs
    for l in (1..layers_fits.len()).rev() {
        for p in 0..net.layers[l].n_in {
            let dead = layers_fits[l].iter().filter(|f| f.from == p).all(|f| f.family == Family::Constant || !f.used);
            if dead {
                for f in layers_fits[l - 1].iter_mut().filter(|f| f.to == p) {
                    f.used = false;
                }
            }
        }
    }
    let mut edges = Vec::new();
    let mut warnings = Vec::new();
    let mut node_exprs: Vec<Expr> = (1..=net.n_inputs()).map(Expr::var).collect();
    for (l, fits) in layers_fits.into_iter().enumerate() {
        let layer = &net.layers[l];
        let mut next = Vec::with_capacity(layer.n_out);
        for q in 0..layer.n_out {
            let mut sum: Option<Expr> = None;
            for fit in fits.iter().filter(|f| f.to == q) {
                if !fit.accepted && fit.used {
                    warnings.push(format!(
                        "edge {}:{}->{} best fit {:?} reaches R² {:.4} below {}; spline residual not captured",
                        l, fit.from, fit.to, fit.family, fit.r2, lib.min_r2
                    ));
                }
                let term = if fit.used { edge_expression(fit, &node_exprs[fit.from], lib.digits) } else { Expr::constant(0.0) };
                sum = Some(match sum {
                    None => term,
                    Some(acc) => Expr::add(acc, term),
                });
            }
            next.push(simplify(&sum.unwrap_or_else(|| Expr::constant(0.0))));
        }
        node_exprs = next;
        edges.extend(fits);
    }
    let expression = node_exprs.into_iter().next().expect("single output").round_constants(lib.digits);
    let mut tolerance: f64 = 0.0;
    for row in sample.rows() {
        match expression.eval(row) {
            Ok(v) => tolerance = tolerance.max((v - net.predict_unchecked(row)).abs()),
            Err(e) => {
                warnings.push(format!("expression not evaluable on the sample: {e}"));
                tolerance = f64::INFINITY;
                break;
            }
        }
    }
    Ok(SnapResult { expression, tolerance, edges, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lib(regime: Regime) -> SnapLibrary {
        SnapLibrary::new(regime)
    }

    #[test]
    fn recognizes_closed_forms() {
        let simple = lib(Regime::Simple);
        let (f, c) = fit_edge(&simple, |x| 0.7 * x - 0.2, 0.0, 1.0, false);
        assert_eq!(f, Family::Linear);
        assert!((c.scale - 0.7).abs() < 1e-9 && (c.offset + 0.2).abs() < 1e-9);
        let (f, c) = fit_edge(&simple, |x| 0.012 / (-0.2 * x - 0.106), 0.0, 1.0, false);
        assert_eq!(f, Family::Inverse);
        assert!(c.r2 > 0.999_999, "{}", c.r2);
        let (f, _) = fit_edge(&simple, |_| 0.0, 0.0, 1.0, false);
        assert_eq!(f, Family::Constant);
        let complex = lib(Regime::Complex);
        let (f, c) = fit_edge(&complex, |x| 0.3 * (5.0 * x + 1.0).cos(), 0.0, 1.0, false);
        assert_eq!(f, Family::Cos);
        assert!(c.r2 > 0.9999);
    }

    #[test]
    fn expression_matches_edge() {
        let simple = lib(Regime::Simple);
        let f = |x: f64| 0.05 / (x + 0.4);
        let (family, c) = fit_edge(&simple, f, 0.2, 1.7, false);
        let fit = EdgeFit {
            layer: 0,
            from: 0,
            to: 0,
            family,
            r2: c.r2,
            score: 0.0,
            shape: c.shape,
            scale: c.scale,
            offset: c.offset,
            lo: 0.2,
            hi: 1.7,
            spread: 1.0,
            used: true,
            accepted: true,
        };
        let e = edge_expression(&fit, &Expr::var(1), 12);
        for x in [0.2, 0.9, 1.7] {
            assert!((e.eval(&[x]).unwrap() - f(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn inadmissible_poles_are_rejected() {
        assert!(!Family::Inverse.admissible(&[0.5]));
        assert!(Family::Inverse.admissible(&[-0.5]));
        assert!(!Family::Tan.admissible(&[3.0, 0.5]));
        assert!(Family::seeds(Family::Tan).iter().all(|t| Family::Tan.admissible(t)));
    }
}
