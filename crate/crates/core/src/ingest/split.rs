use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::TweetRecord;
use crate::error::{Error, Result};

pub const MIN_SPLIT_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Config(format!("split ratios out of range: {r:?}")));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {r:?}")));
        }
        Ok(())
    }

    /// `(train, validation, test)` sizes for `n` items. Validation and test
    /// are rounded; the remainder goes to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = (n as f64 * self.validation).round() as usize;
        let test = ((n as f64 * self.test).round() as usize).min(n - val.min(n));
        let val = val.min(n);
        (n - val - test, val, test)
    }
}

/// Index partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn of(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Membership lookup for each of the `n` indices.
    pub fn assignment(&self, n: usize) -> Vec<Split> {
        let mut out = vec![Split::Train; n];
        for &i in &self.validation {
            out[i] = Split::Validation;
        }
        for &i in &self.test {
            out[i] = Split::Test;
        }
        out
    }
}

/// Shuffles `0..n` under `seed` and cuts it by `ratios`.
pub fn split_indices(n: usize, ratios: &SplitRatios, seed: u64) -> Result<SplitIndices> {
    ratios.validate()?;
    if n < MIN_SPLIT_SIZE {
        return Err(Error::Domain(format!(
            "need at least {MIN_SPLIT_SIZE} items to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (tr, va, _) = ratios.sizes(n);
    let test = order.split_off(tr + va);
    let validation = order.split_off(tr);
    Ok(SplitIndices {
        train: order,
        validation,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<TweetRecord>,
    pub validation: Vec<TweetRecord>,
    pub test: Vec<TweetRecord>,
    pub seed: u64,
}

impl DatasetSplit {
    /// `tweet_id → split`, the form written to the split manifest.
    pub fn manifest(&self) -> BTreeMap<String, Split> {
        let mut m = BTreeMap::new();
        for (split, recs) in [
            (Split::Train, &self.train),
            (Split::Validation, &self.validation),
            (Split::Test, &self.test),
        ] {
            for r in recs {
                m.insert(r.tweet_id.clone(), split);
            }
        }
        m
    }
}

pub fn split_dataset(records: &[TweetRecord], ratios: &SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let idx = split_indices(records.len(), ratios, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&idx.train),
        validation: pick(&idx.validation),
        test: pick(&idx.test),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_is_80_10_10() {
        let s = split_indices(100, &SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn remainder_goes_to_train() {
        let s = split_indices(101, &SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (81, 10, 10));
    }

    #[test]
    fn deterministic_under_seed() {
        let r = SplitRatios::default();
        assert_eq!(split_indices(50, &r, 3).unwrap(), split_indices(50, &r, 3).unwrap());
        assert_ne!(split_indices(50, &r, 3).unwrap(), split_indices(50, &r, 4).unwrap());
    }

    #[test]
    fn too_small_is_error() {
        assert!(matches!(
            split_indices(9, &SplitRatios::default(), 0),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn partition(n in 10usize..400, seed in any::<u64>()) {
            let s = split_indices(n, &SplitRatios::default(), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let exact = [0.8 * n as f64, 0.1 * n as f64, 0.1 * n as f64];
            for (got, want) in [s.train.len(), s.validation.len(), s.test.len()].iter().zip(exact) {
                prop_assert!((*got as f64 - want).abs() <= 1.0 + 1e-9, "{} vs {}", got, want);
            }
        }
    }
}
