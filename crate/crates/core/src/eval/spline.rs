//! Natural cubic spline interpolation, used to draw smoothed ROC curves.

use crate::error::{Error, Result};

/// Solves a tridiagonal system by forward elimination and back substitution.
/// `sub[i]` multiplies `x[i-1]` in row `i` (so `sub[0]` is unused) and
/// `sup[i]` multiplies `x[i+1]` (so the last entry is unused).
pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(Error::Dimension("tridiagonal bands must share a length".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    for i in 0..n {
        if i > 0 {
            denom = diag[i] - sub[i] * c[i - 1];
        }
        if denom.abs() < 1e-300 {
            return Err(Error::Numeric(format!("zero pivot in row {i}")));
        }
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - if i > 0 { sub[i] * d[i - 1] } else { 0.0 }) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    m: Vec<f64>,
}

impl NaturalSpline {
    /// Knots must be finite with strictly increasing `xs`; at least two.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::dims("spline knots", &[xs.len()], &[ys.len()]));
        }
        if xs.len() < 2 {
            return Err(Error::Domain("a spline needs at least two knots".into()));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite spline knot".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("spline knots must be strictly increasing".into()));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut sub = vec![0.0; k];
            let mut diag = vec![0.0; k];
            let mut sup = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                sub[j] = h[i - 1];
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                sup[j] = h[i];
                rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
            }
            let inner = thomas(&sub, &diag, &sup, &rhs)?;
            m[1..n - 1].copy_from_slice(&inner);
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn second_derivatives(&self) -> &[f64] {
        &self.m
    }

    /// Evaluates the spline; points outside the knots use the end segments.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - x) / h, (x - x0) / h);
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a.powi(3) - a) * self.m[i] + (b.powi(3) - b) * self.m[i + 1]) * h * h / 6.0
    }
}

pub const DEFAULT_SAMPLES: usize = 200;

/// Smoothed ROC polyline for plotting. Points sharing an `fpr` collapse to
/// the highest `tpr`; the spline is sampled on a uniform grid and clamped to
/// the unit square. With fewer than three distinct `fpr` values the input is
/// returned as is.
pub fn spline_smooth(points: &[(f64, f64)], samples: usize) -> Vec<(f64, f64)> {
    let mut knots: Vec<(f64, f64)> = Vec::new();
    for &(x, y) in points {
        match knots.last_mut() {
            Some(last) if last.0 == x => last.1 = last.1.max(y),
            _ => knots.push((x, y)),
        }
    }
    let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
    let ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
    let spline = match (xs.len() >= 3).then(|| NaturalSpline::fit(&xs, &ys)) {
        Some(Ok(s)) => s,
        Some(Err(e)) => {
            log::warn!("ROC smoothing skipped: {e}");
            return points.to_vec();
        }
        None => {
            log::warn!("ROC smoothing skipped: {} distinct false-positive rates", xs.len());
            return points.to_vec();
        }
    };
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let samples = samples.max(2);
    (0..samples)
        .map(|s| {
            let x = lo + (hi - lo) * s as f64 / (samples - 1) as f64;
            (x, spline.eval(x).clamp(0.0, 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    #[test]
    fn thomas_matches_dense_solve() {
        let sub = [0.0, 1.0, 2.0, 0.5];
        let diag = [4.0, 5.0, 6.0, 3.0];
        let sup = [1.0, 0.5, 1.5, 0.0];
        let rhs = [1.0, -2.0, 3.0, 0.25];
        let x = thomas(&sub, &diag, &sup, &rhs).unwrap();
        let mut a = DMatrix::zeros(4, 4);
        for i in 0..4 {
            a[(i, i)] = diag[i];
            if i > 0 {
                a[(i, i - 1)] = sub[i];
            }
            if i < 3 {
                a[(i, i + 1)] = sup[i];
            }
        }
        let want = a.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        for i in 0..4 {
            assert!((x[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_lines_exactly() {
        let xs = [0.0, 0.3, 0.5, 1.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let s = NaturalSpline::fit(&xs, &ys).unwrap();
        assert!(s.second_derivatives().iter().all(|m| m.abs() < 1e-12));
        for x in [0.1, 0.45, 0.9] {
            assert!((s.eval(x) - (2.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(NaturalSpline::fit(&[0.0], &[1.0]).is_err());
        assert!(NaturalSpline::fit(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(NaturalSpline::fit(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn smoothing_endpoints_and_fallback() {
        let pts = [(0.0, 0.0), (0.0, 0.4), (0.2, 0.7), (0.5, 0.9), (1.0, 1.0)];
        let s = spline_smooth(&pts, 21);
        assert_eq!(s.len(), 21);
        assert_eq!(s[0], (0.0, 0.4));
        assert!((s[20].1 - 1.0).abs() < 1e-12);
        assert!(s.iter().all(|p| (0.0..=1.0).contains(&p.1)));
        let two = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        assert_eq!(spline_smooth(&two, 50), two.to_vec());
    }

    proptest! {
        #[test]
        fn interpolates_and_matches_dense_system(ys in proptest::collection::vec(-5.0f64..5.0, 3..12)) {
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64 * 0.7 + (i * i) as f64 * 0.05).collect();
            let s = NaturalSpline::fit(&xs, &ys).unwrap();
            for (x, y) in xs.iter().zip(&ys) {
                prop_assert!((s.eval(*x) - y).abs() < 1e-9);
            }
            let n = xs.len();
            let mut a = DMatrix::zeros(n, n);
            let mut b = DVector::zeros(n);
            a[(0, 0)] = 1.0;
            a[(n - 1, n - 1)] = 1.0;
            for i in 1..n - 1 {
                let (h0, h1) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
                a[(i, i - 1)] = h0;
                a[(i, i)] = 2.0 * (h0 + h1);
                a[(i, i + 1)] = h1;
                b[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            let m = a.lu().solve(&b).unwrap();
            for i in 0..n {
                prop_assert!((s.second_derivatives()[i] - m[i]).abs() < 1e-9);
            }
            for i in 0..n - 1 {
                let h = xs[i + 1] - xs[i];
                let mid = ys[i] / 2.0 + ys[i + 1] / 2.0 - h * h * (m[i] + m[i + 1]) / 16.0;
                prop_assert!((s.eval(xs[i] + h / 2.0) - mid).abs() < 1e-9);
            }
        }
    }
}
