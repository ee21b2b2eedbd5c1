use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::array::NumArray;
use crate::error::{Error, Result};

/// Named learnable arrays, ordered by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    arrays: BTreeMap<String, NumArray>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NumArray) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&NumArray> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NumArray> {
        self.arrays.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&NumArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NumArray)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut NumArray)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.arrays.values().map(NumArray::len).sum()
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    /// Adds `other` elementwise; both sets must have the same names and shapes.
    pub fn add_assign(&mut self, other: &Params) -> Result<()> {
        for (name, g) in &other.arrays {
            let mine = self
                .arrays
                .get_mut(name)
                .ok_or_else(|| Error::Dimension(format!("unknown parameter `{name}`")))?;
            if !mine.same_shape(g) {
                return Err(Error::dims(name, mine.shape(), g.shape()));
            }
            mine.add_assign(g);
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.arrays.values_mut() {
            v.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Moves every array of `other` into `self` under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: Params) {
        for (k, v) in other.arrays {
            self.arrays.insert(format!("{prefix}{k}"), v);
        }
    }

    /// Arrays whose name starts with `prefix`, with the prefix stripped.
    pub fn extract_prefixed(&self, prefix: &str) -> Params {
        Params {
            arrays: self
                .arrays
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(NumArray::is_finite)
    }
}

/// Uniform initialization in `[-scale, scale]`.
pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> NumArray {
    let mut a = NumArray::zeros(shape);
    for v in a.data_mut() {
        *v = rng.random_range(-scale..=scale);
    }
    a
}

/// Glorot-style uniform initialization for a `[fan_in × fan_out]` matrix.
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> NumArray {
    let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], scale)
}
