//! Logistic-regression baseline over per-bucket feature rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    pub lr: f64,
    pub iterations: usize,
    pub l2: f64,
    /// Stop once the gradient's max-abs entry falls below this.
    pub grad_tol: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            iterations: 5000,
            l2: 1e-4,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticRegression {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    /// Mean log-loss plus `l2/2 · ‖w‖²` (the bias is not penalized).
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[bool], l2: f64) -> f64 {
        let ll: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| {
                let p = self.predict(x).clamp(1e-15, 1.0 - 1e-15);
                -(if y { p.ln() } else { (1.0 - p).ln() })
            })
            .sum::<f64>()
            / xs.len() as f64;
        ll + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn gradient(&self, xs: &[Vec<f64>], ys: &[bool], l2: f64) -> (Vec<f64>, f64) {
        let n = xs.len() as f64;
        let mut gw: Vec<f64> = self.weights.iter().map(|w| l2 * w).collect();
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let r = (self.predict(x) - if y { 1.0 } else { 0.0 }) / n;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += r * v;
            }
            gb += r;
        }
        (gw, gb)
    }

    /// Full-batch gradient descent from the current weights.
    pub fn fit_from(&mut self, xs: &[Vec<f64>], ys: &[bool], cfg: &LrConfig) -> Result<usize> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Training(format!(
                "logistic regression needs matching nonempty data, got {} rows and {} labels",
                xs.len(),
                ys.len()
            )));
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != self.weights.len()) {
            return Err(Error::dims("logistic regression row", &[self.weights.len()], &[bad.len()]));
        }
        let pos = ys.iter().filter(|&&y| y).count();
        if pos == 0 || pos == ys.len() {
            return Err(Error::Training("logistic regression training set has a single class".into()));
        }
        for it in 0..cfg.iterations {
            let (gw, gb) = self.gradient(xs, ys, cfg.l2);
            let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
            if gmax < cfg.grad_tol {
                return Ok(it);
            }
            for (w, g) in self.weights.iter_mut().zip(&gw) {
                *w -= cfg.lr * g;
            }
            self.bias -= cfg.lr * gb;
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Training("logistic regression diverged".into()));
        }
        Ok(cfg.iterations)
    }

    pub fn fit(xs: &[Vec<f64>], ys: &[bool], cfg: &LrConfig) -> Result<Self> {
        let dim = xs.first().map_or(0, Vec::len);
        let mut m = Self::zeros(dim);
        m.fit_from(xs, ys, cfg)?;
        Ok(m)
    }
}
