//! Uniform cubic B-spline basis.
//!
//! A grid of `G` equal intervals over `[lo, hi]` carries `G + 3` basis
//! functions; on interval `i` the active ones are `i..=i + 3`. Outside
//! `[lo, hi]` each basis function continues linearly from its boundary value
//! and slope, which keeps the partition of unity and first derivatives
//! continuous while preventing cubic blow-up far from the grid.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
}

/// The four nonzero basis values on one interval and their index offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisWindow {
    pub first: usize,
    pub values: [f64; 4],
    /// Derivatives with respect to `x`.
    pub slopes: [f64; 4],
}

impl SplineGrid {
    pub fn new(lo: f64, hi: f64, intervals: usize) -> Self {
        let hi = if hi - lo > 1e-9 { hi } else { lo + 1e-9 };
        Self { lo, hi, intervals }
    }

    pub fn n_basis(&self) -> usize {
        self.intervals + 3
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    pub fn window(&self, x: f64) -> BasisWindow {
        let h = self.step();
        let s = (x - self.lo) / h;
        let i = (s.floor().max(0.0) as usize).min(self.intervals - 1);
        // distance beyond the grid, in units of x
        let (t, beyond) = if s < 0.0 {
            (0.0, x - self.lo)
        } else if s > self.intervals as f64 {
            (1.0, x - self.hi)
        } else {
            (s - i as f64, 0.0)
        };
        let u = 1.0 - t;
        let t2 = t * t;
        let t3 = t2 * t;
        let mut values = [
            u * u * u / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0,
        ];
        let slopes = [
            -u * u / 2.0 / h,
            (3.0 * t2 - 4.0 * t) / 2.0 / h,
            (-3.0 * t2 + 2.0 * t + 1.0) / 2.0 / h,
            t2 / 2.0 / h,
        ];
        if beyond != 0.0 {
            for (v, d) in values.iter_mut().zip(&slopes) {
                *v += d * beyond;
            }
        }
        BasisWindow { first: i, values, slopes }
    }

    /// All basis values at `x`, mostly zeros.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let w = self.window(x);
        let mut out = vec![0.0; self.n_basis()];
        out[w.first..w.first + 4].copy_from_slice(&w.values);
        out
    }
}

/// Reference cardinal cubic B-spline on `[0, 4]`.
pub fn cardinal_cubic(t: f64) -> f64 {
    if !(0.0..4.0).contains(&t) {
        0.0
    } else if t < 1.0 {
        t * t * t / 6.0
    } else if t < 2.0 {
        (-3.0 * t.powi(3) + 12.0 * t * t - 12.0 * t + 4.0) / 6.0
    } else if t < 3.0 {
        (3.0 * t.powi(3) - 24.0 * t * t + 60.0 * t - 44.0) / 6.0
    } else {
        (4.0 - t).powi(3) / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_cardinal_definition_inside_grid() {
        let g = SplineGrid::new(0.0, 1.0, 8);
        for k in 0..=200 {
            let x = k as f64 / 200.0;
            let b = g.basis(x);
            for (j, v) in b.iter().enumerate() {
                let s = x / g.step() - j as f64 + 3.0;
                assert!((v - cardinal_cubic(s)).abs() < 1e-12, "x {x} j {j}");
            }
        }
    }

    #[test]
    fn partition_of_unity_including_extension() {
        let g = SplineGrid::new(-0.3, 2.1, 5);
        for k in 0..=300 {
            let x = -1.0 + 4.0 * k as f64 / 300.0;
            let sum: f64 = g.window(x).values.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let dsum: f64 = g.window(x).slopes.iter().sum();
            assert!(dsum.abs() < 1e-10);
        }
    }

    #[test]
    fn slopes_match_differences() {
        let g = SplineGrid::new(0.0, 1.0, 6);
        let h = 1e-6;
        for x in [0.05, 0.33, 0.5, 0.91] {
            let (a, b) = (g.basis(x + h), g.basis(x - h));
            let w = g.window(x);
            for k in 0..4 {
                let fd = (a[w.first + k] - b[w.first + k]) / (2.0 * h);
                assert!((fd - w.slopes[k]).abs() < 1e-6);
            }
        }
    }
}
