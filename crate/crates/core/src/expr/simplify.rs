//! Light algebraic clean-up: constant folding, distribution of constant
//! factors over sums, and collection of like terms. Not a CAS.

use super::Expr;

/// Flattens `e` into `Σ coef·term`, where a `None` term is the constant 1.
/// Constant factors are pulled out of products and quotients and pushed
/// through sums and negations.
pub fn sum_terms(e: &Expr) -> Vec<(f64, Option<Expr>)> {
    let mut out = Vec::new();
    collect(e, 1.0, &mut out);
    merge(out)
}

fn collect(e: &Expr, scale: f64, out: &mut Vec<(f64, Option<Expr>)>) {
    match e {
        Expr::Const { value, .. } => out.push((scale * value, None)),
        Expr::Var(_) => out.push((scale, Some(e.clone()))),
        Expr::Add(a, b) => {
            collect(a, scale, out);
            collect(b, scale, out);
        }
        Expr::Neg(a) => collect(a, -scale, out),
        Expr::Mul(a, b) => {
            let (sa, sb) = (simplify(a), simplify(b));
            match (sa.as_const(), sb.as_const()) {
                (Some(ca), _) => collect(&sb, scale * ca, out),
                (_, Some(cb)) => collect(&sa, scale * cb, out),
                _ => {
                    let (ka, ta) = split_scalar(sa);
                    let (kb, tb) = split_scalar(sb);
                    out.push((scale * ka * kb, Some(Expr::mul(ta, tb))));
                }
            }
        }
        Expr::Div(a, b) => {
            let (sa, sb) = (simplify(a), simplify(b));
            match (sa.as_const(), sb.as_const()) {
                (_, Some(cb)) if cb != 0.0 => collect(&sa, scale / cb, out),
                (Some(ca), _) => out.push((scale * ca, Some(Expr::div(Expr::constant(1.0), sb)))),
                _ => {
                    let (ka, ta) = split_scalar(sa);
                    out.push((scale * ka, Some(Expr::div(ta, sb))));
                }
            }
        }
        Expr::Pow(a, n) => {
            let sa = simplify(a);
            match sa.as_const() {
                Some(c) if (c != 0.0 || *n >= 0) => out.push((scale * c.powi(*n), None)),
                _ => {
                    if *n == 0 {
                        out.push((scale, None));
                    } else if *n == 1 {
                        collect(&sa, scale, out);
                    } else {
                        out.push((scale, Some(Expr::pow(sa, *n))));
                    }
                }
            }
        }
        Expr::Func(f, a) => {
            let sa = simplify(a);
            match sa.as_const().map(|c| f.apply(c)) {
                Some(Ok((v, _))) => out.push((scale * v, None)),
                _ => out.push((scale, Some(Expr::func(*f, sa)))),
            }
        }
    }
}

/// Splits a simplified expression into a scalar factor and the remainder
/// when it is a single scaled term.
fn split_scalar(e: Expr) -> (f64, Expr) {
    let terms = sum_terms(&e);
    if let [(k, Some(t))] = terms.as_slice() {
        (*k, t.clone())
    } else {
        (1.0, e)
    }
}

fn merge(terms: Vec<(f64, Option<Expr>)>) -> Vec<(f64, Option<Expr>)> {
    let mut out: Vec<(f64, Option<Expr>)> = Vec::new();
    for (k, t) in terms {
        match out.iter_mut().find(|(_, u)| *u == t) {
            Some(slot) => slot.0 += k,
            None => out.push((k, t)),
        }
    }
    out.retain(|(k, t)| *k != 0.0 || t.is_none());
    // variable terms first by index, then other terms in first-seen order, constant last
    out.sort_by_key(|(_, t)| match t {
        Some(Expr::Var(i)) => (0, *i),
        Some(_) => (1, 0),
        None => (2, 0),
    });
    if out.iter().any(|(_, t)| t.is_some()) {
        out.retain(|(k, t)| t.is_some() || *k != 0.0);
    }
    out
}

fn rebuild(terms: &[(f64, Option<Expr>)]) -> Expr {
    let piece = |k: f64, t: &Option<Expr>| -> Expr {
        match t {
            None => Expr::constant(k),
            Some(Expr::Div(n, d)) if n.as_const() == Some(1.0) => Expr::div(Expr::constant(k), (**d).clone()),
            Some(t) if k == 1.0 => t.clone(),
            Some(t) if k == -1.0 => Expr::neg(t.clone()),
            Some(t) => Expr::mul(Expr::constant(k), t.clone()),
        }
    };
    let mut iter = terms.iter();
    let Some((k0, t0)) = iter.next() else {
        return Expr::constant(0.0);
    };
    let mut acc = piece(*k0, t0);
    for (k, t) in iter {
        acc = if *k < 0.0 { Expr::sub(acc, piece(-k, t)) } else { Expr::add(acc, piece(*k, t)) };
    }
    acc
}

/// Folds constants, distributes constant factors and merges like terms.
/// The result evaluates to the same value as `e` up to rounding.
pub fn simplify(e: &Expr) -> Expr {
    rebuild(&sum_terms(e))
}

/// Coefficient `k` of the explicit `k·x_var` term once `e` is expanded into
/// a sum, or 0 when no such term exists.
pub fn linear_coefficient(e: &Expr, var: usize) -> f64 {
    sum_terms(e)
        .iter()
        .filter(|(_, t)| *t == Some(Expr::Var(var)))
        .map(|(k, _)| *k)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    fn p(s: &str) -> Expr {
        parse_expression(s).unwrap()
    }

    #[test]
    fn folds_and_collects() {
        let e = p("0.5*(2*x1 + 4) - 0.25*x1 + 3*(1 - 1)");
        let s = simplify(&e);
        assert_eq!(s.to_string(), "0.75*x1 + 2");
        assert_eq!(linear_coefficient(&e, 1), 0.75);
        assert_eq!(linear_coefficient(&e, 2), 0.0);
    }

    #[test]
    fn keeps_rational_terms() {
        let e = p("2*(0.82*x1 + 0.012/(-0.2*x2 - 0.106)) - 0.15*x3");
        let s = simplify(&e);
        assert_eq!(linear_coefficient(&s, 1), 1.64);
        assert_eq!(linear_coefficient(&s, 3), -0.15);
        for x in [[0.1, 0.2, 0.3], [0.9, 0.5, 0.0]] {
            assert!((s.eval(&x).unwrap() - e.eval(&x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn leading_negative_term_prints_plainly() {
        assert_eq!(simplify(&p("0.5 - 0.12*x3")).to_string(), "-0.12*x3 + 0.5");
        assert_eq!(simplify(&p("1 - x2")).to_string(), "-x2 + 1");
    }

    #[test]
    fn zero_simplifies_to_constant() {
        assert_eq!(simplify(&p("x1 - x1")).as_const(), Some(0.0));
        assert_eq!(simplify(&p("cos(0)*3")).as_const(), Some(3.0));
    }

    #[test]
    fn preserves_value_on_nonlinear_forms() {
        for s in ["-0.36*cos(1.65*x1 + 8.28)*2 - 0.031", "3*(x1*x2)/(2*x2 + 1)", "-(x1 - 0.2)^2*4", "exp(-2*x1)/0.5"] {
            let e = p(s);
            let t = simplify(&e);
            for x in [[0.1, 0.7], [0.8, 0.3]] {
                assert!((t.eval(&x).unwrap() - e.eval(&x).unwrap()).abs() < 1e-12, "{s} -> {t}");
            }
        }
    }
}
