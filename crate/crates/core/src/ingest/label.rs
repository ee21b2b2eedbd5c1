//! Weak labels: an engagement score thresholded into propagated /
//! not-propagated, and lexicon polarity for sentiment.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use chrono::Timelike;
use serde::{Deserialize, Serialize};

use super::clean::tokens;
use super::record::{Propagation, Sentiment, TweetRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum ThresholdMode {
    /// Median of the dataset's scores; keeps the classes balanced.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelWeights {
    pub w_like: f64,
    pub w_retweet: f64,
    pub w_comment: f64,
    pub w_follower: f64,
    pub w_verified: f64,
    pub w_daytime: f64,
    pub threshold: ThresholdMode,
}

impl Default for LabelWeights {
    fn default() -> Self {
        Self {
            w_like: 0.20,
            w_retweet: 0.25,
            w_comment: 0.20,
            w_follower: 0.15,
            w_verified: 0.10,
            w_daytime: 0.10,
            threshold: ThresholdMode::Median,
        }
    }
}

impl LabelWeights {
    fn all(&self) -> [f64; 6] {
        [
            self.w_like,
            self.w_retweet,
            self.w_comment,
            self.w_follower,
            self.w_verified,
            self.w_daytime,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.all();
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("label weights must be nonnegative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("label weights sum to {sum}, not 1")));
        }
        if let ThresholdMode::Fixed(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::Config("fixed threshold must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn over(values: impl Iterator<Item = f64>) -> Range {
        values.fold(
            Range {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, v| Range {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }

    /// Min-max normalization; a degenerate range contributes 0.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Per-field dataset ranges used by the score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub likes: Range,
    pub retweets: Range,
    pub comments: Range,
    /// Range of `ln(1 + followers)`.
    pub log_followers: Range,
}

impl LabelStats {
    pub fn from_records(records: &[TweetRecord]) -> Self {
        Self {
            likes: Range::over(records.iter().map(|r| r.likes as f64)),
            retweets: Range::over(records.iter().map(|r| r.retweets as f64)),
            comments: Range::over(records.iter().map(|r| r.comments as f64)),
            log_followers: Range::over(records.iter().map(|r| (r.followers as f64).ln_1p())),
        }
    }
}

/// Daytime is `[06:00, 22:00)` UTC.
pub fn is_daytime(r: &TweetRecord) -> bool {
    (6..22).contains(&r.created_at.hour())
}

pub fn propagation_score(r: &TweetRecord, w: &LabelWeights, stats: &LabelStats) -> f64 {
    w.w_like * stats.likes.normalize(r.likes as f64)
        + w.w_retweet * stats.retweets.normalize(r.retweets as f64)
        + w.w_comment * stats.comments.normalize(r.comments as f64)
        + w.w_follower * stats.log_followers.normalize((r.followers as f64).ln_1p())
        + w.w_verified * f64::from(u8::from(r.verified))
        + w.w_daytime * f64::from(u8::from(is_daytime(r)))
}

/// `propagated` iff the score is strictly above `threshold`.
pub fn assign_propagation_label(
    r: &TweetRecord,
    w: &LabelWeights,
    stats: &LabelStats,
    threshold: f64,
) -> Propagation {
    Propagation::from_bool(propagation_score(r, w, stats) > threshold)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Labels every record in place; returns the threshold used.
pub fn label_propagation(records: &mut [TweetRecord], w: &LabelWeights) -> Result<f64> {
    w.validate()?;
    let stats = LabelStats::from_records(records);
    let scores: Vec<f64> = records
        .iter()
        .map(|r| propagation_score(r, w, &stats))
        .collect();
    let threshold = match w.threshold {
        ThresholdMode::Median => median(&mut scores.clone()),
        ThresholdMode::Fixed(t) => t,
    };
    for (r, s) in records.iter_mut().zip(scores) {
        r.propagation_label = Some(Propagation::from_bool(s > threshold));
    }
    Ok(threshold)
}

/// Word polarity map.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    polarity: HashMap<String, i8>,
}

pub const DEFAULT_LEXICON: &str = include_str!("../../resources/lexicon.tsv");

impl Lexicon {
    /// Parses `word<TAB>+1|-1` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut polarity = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, pol) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("lexicon line {}: expected word<TAB>polarity", i + 1)))?;
            let p = match pol.trim() {
                "+1" | "1" => 1,
                "-1" => -1,
                other => {
                    return Err(Error::Parse(format!(
                        "lexicon line {}: polarity must be +1 or -1, got {other:?}",
                        i + 1
                    )))
                }
            };
            polarity.insert(word.trim().to_lowercase(), p);
        }
        if polarity.is_empty() {
            return Err(Error::Config("lexicon is empty".into()));
        }
        Ok(Self { polarity })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Built-in general-purpose lexicon.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }

    pub fn polarity(&self, word: &str) -> i8 {
        self.polarity.get(word).copied().unwrap_or(0)
    }

    pub fn words(&self, polarity: i8) -> Vec<&str> {
        let mut w: Vec<&str> = self
            .polarity
            .iter()
            .filter(|(_, &p)| p == polarity)
            .map(|(k, _)| k.as_str())
            .collect();
        w.sort_unstable();
        w
    }
}

pub fn assign_sentiment_label(clean_text: &str, lexicon: &Lexicon) -> Sentiment {
    let total: i64 = tokens(clean_text)
        .map(|t| i64::from(lexicon.polarity(t)))
        .sum();
    match total.signum() {
        1 => Sentiment::Positive,
        -1 => Sentiment::Negative,
        _ => Sentiment::Neutral,
    }
}
