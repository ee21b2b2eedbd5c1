use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Params,
    second: Params,
}

impl Adam {
    /// Zero moments shaped like `params`.
    pub fn new(params: &Params, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    /// One update. Parameters missing from `grads` are treated as having a
    /// zero gradient.
    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Dimension(format!("gradient for unknown parameter `{name}`")))?;
            if !p.same_shape(g) {
                return Err(Error::dims(name, p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let (Some(m), Some(v)) = (self.first.get_mut(name), self.second.get_mut(name)) else {
                return Err(Error::Dimension(format!(
                    "optimizer has no state for `{name}`"
                )));
            };
            if !m.same_shape(p) {
                return Err(Error::dims(name, m.shape(), p.shape()));
            }
            let g = grads.get(name);
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / c1;
                let vhat = vi / c2;
                p.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
