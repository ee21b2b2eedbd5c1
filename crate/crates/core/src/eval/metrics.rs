use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A ratio metric; `degenerate` marks a 0/0 that was reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

impl Metric {
    fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Self {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Self {
                value: num / den,
                degenerate: false,
            }
        }
    }
}

/// Binary confusion counts with "propagated" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_labels(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::dims("confusion matrix", &[predicted.len()], &[actual.len()]));
        }
        let mut m = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            m.record(p, a);
        }
        Ok(m)
    }

    /// Thresholds scores strictly: `score > threshold` is positive.
    pub fn from_scores(scores: &[f64], actual: &[bool], threshold: f64) -> Result<Self> {
        let predicted: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
        Self::from_labels(&predicted, actual)
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn recall(&self) -> Metric {
        Metric::ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn precision(&self) -> Metric {
        Metric::ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    /// `2PR / (P + R)`, computed as `2TP / (2TP + FP + FN)`.
    pub fn f1(&self) -> Metric {
        let m = Metric::ratio(2.0 * self.tp as f64, (2 * self.tp + self.fp + self.fn_) as f64);
        Metric {
            degenerate: m.degenerate || self.precision().degenerate || self.recall().degenerate,
            ..m
        }
    }

    pub fn accuracy(&self) -> Metric {
        Metric::ratio((self.tp + self.tn) as f64, self.total() as f64)
    }

    /// Rows are actual (not, prop), columns predicted (not, prop).
    pub fn to_csv(&self) -> String {
        format!(
            "actual,pred_not_propagated,pred_propagated\nnot_propagated,{},{}\npropagated,{},{}\n",
            self.tn, self.fp, self.fn_, self.tp
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counts() {
        let m = ConfusionMatrix::from_labels(&[true, true, false, false, true], &[true, false, false, true, true]).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (2, 1, 1, 1));
        assert!((m.precision().value - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall().value - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1().value - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.accuracy().value - 0.6).abs() < 1e-15);
        assert!(!m.f1().degenerate);
    }

    #[test]
    fn zero_over_zero_flagged() {
        let m = ConfusionMatrix::from_labels(&[false, false], &[false, false]).unwrap();
        assert_eq!(m.precision(), Metric { value: 0.0, degenerate: true });
        assert_eq!(m.recall(), Metric { value: 0.0, degenerate: true });
        assert!(m.f1().degenerate);
        let no_pos_pred = ConfusionMatrix::from_labels(&[false], &[true]).unwrap();
        assert!(no_pos_pred.precision().degenerate);
        assert_eq!(no_pos_pred.f1().value, 0.0);
    }

    #[test]
    fn strict_threshold_and_length_check() {
        let m = ConfusionMatrix::from_scores(&[0.5, 0.5000001], &[true, true], 0.5).unwrap();
        assert_eq!((m.tp, m.fn_), (1, 1));
        assert!(ConfusionMatrix::from_labels(&[true], &[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = ConfusionMatrix { tp: 4, fp: 3, tn: 2, fn_: 1 };
        assert_eq!(
            m.to_csv(),
            "actual,pred_not_propagated,pred_propagated\nnot_propagated,2,3\npropagated,1,4\n"
        );
    }

    proptest! {
        #[test]
        fn f1_is_harmonic_mean(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let (p, a): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let m = ConfusionMatrix::from_labels(&p, &a).unwrap();
            prop_assert_eq!(m.total() as usize, p.len());
            let (pr, rc, f1) = (m.precision(), m.recall(), m.f1());
            for v in [pr.value, rc.value, f1.value] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if pr.value + rc.value > 0.0 {
                let h = 2.0 * pr.value * rc.value / (pr.value + rc.value);
                prop_assert!((h - f1.value).abs() < 1e-12);
            }
        }
    }
}
