//! Engagement traces per bucket and the per-bucket feature bundle fed to the
//! sequence model.

use std::collections::HashMap;
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::InfluenceTable;
use crate::ingest::{Propagation, TopicSeries, TweetRecord};

/// Width of the non-temporal input slice: influence, 3 sentiment
/// probabilities, 3 engagement counts.
pub const INPUT_DIM: usize = 7;

/// Column ranges of each input family inside a bundle row.
pub const USER_COLS: std::ops::Range<usize> = 0..1;
pub const SENTIMENT_COLS: std::ops::Range<usize> = 1..4;
pub const PROPAGATION_COLS: std::ops::Range<usize> = 4..7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationFeatures {
    pub ap: u64,
    pub tp: u64,
    pub ct: u64,
    /// `(ΔAP, ΔTP, ΔCT)` per bucket.
    pub per_bucket: Vec<(u64, u64, u64)>,
}

fn totals(series: &TopicSeries, f: impl Fn(&crate::ingest::Bucket) -> u64) -> (u64, Vec<u64>) {
    let per: Vec<u64> = series.buckets.iter().map(f).collect();
    (per.iter().sum(), per)
}

/// Total likes and likes per bucket.
pub fn topic_resonance(series: &TopicSeries) -> (u64, Vec<u64>) {
    totals(series, |b| b.likes)
}

/// Total retweets and retweets per bucket.
pub fn direct_transmission(series: &TopicSeries) -> (u64, Vec<u64>) {
    totals(series, |b| b.retweets)
}

/// Total comments and comments per bucket.
pub fn topic_exposure(series: &TopicSeries) -> (u64, Vec<u64>) {
    totals(series, |b| b.comments)
}

pub fn propagation_features(series: &TopicSeries) -> PropagationFeatures {
    let (ap, a) = topic_resonance(series);
    let (tp, t) = direct_transmission(series);
    let (ct, c) = topic_exposure(series);
    PropagationFeatures {
        ap,
        tp,
        ct,
        per_bucket: a.into_iter().zip(t).zip(c).map(|((a, t), c)| (a, t, c)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureOptions {
    /// Feed running totals instead of per-bucket deltas.
    pub cumulative: bool,
    /// Apply `ln(1 + x)` to counts before standardizing.
    pub log1p_counts: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            cumulative: false,
            log1p_counts: true,
        }
    }
}

/// Count features before standardization.
pub fn raw_propagation(series: &TopicSeries, opts: &FeatureOptions) -> Vec<[f64; 3]> {
    let mut acc = [0u64; 3];
    series
        .buckets
        .iter()
        .map(|b| {
            let d = [b.likes, b.retweets, b.comments];
            let v = if opts.cumulative {
                for k in 0..3 {
                    acc[k] += d[k];
                }
                acc
            } else {
                d
            };
            v.map(|x| if opts.log1p_counts { (x as f64).ln_1p() } else { x as f64 })
        })
        .collect()
}

pub const SD_FLOOR: f64 = 1e-8;

/// Z-score parameters for the three count features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: [f64; 3],
    pub sd: [f64; 3],
    pub options: FeatureOptions,
}

impl StandardizationStats {
    /// Fits on the given (training) series only.
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a TopicSeries>, options: FeatureOptions) -> Result<Self> {
        let rows: Vec<[f64; 3]> = train
            .into_iter()
            .flat_map(|s| raw_propagation(s, &options))
            .collect();
        if rows.is_empty() {
            return Err(Error::Domain("standardization needs at least one training bucket".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        for r in &rows {
            for k in 0..3 {
                mean[k] += r[k] / n;
            }
        }
        let mut sd = [0.0; 3];
        for r in &rows {
            for k in 0..3 {
                sd[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        Ok(Self {
            mean,
            sd: sd.map(f64::sqrt),
            options,
        })
    }

    pub fn apply(&self, raw: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = (raw[k] - self.mean[k]) / self.sd[k].max(SD_FLOOR);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketFeatures {
    pub start: DateTime<Utc>,
    pub influence: f64,
    /// `(positive, neutral, negative)` probabilities.
    pub sentiment: [f64; 3],
    pub propagation: [f64; 3],
    pub tweet_count: usize,
    /// Majority of member labels, ties counted as propagated; `None` for
    /// buckets without labeled tweets.
    pub label: Option<Propagation>,
}

impl BucketFeatures {
    pub fn input_row(&self) -> [f64; INPUT_DIM] {
        let [s0, s1, s2] = self.sentiment;
        let [p0, p1, p2] = self.propagation;
        [self.influence, s0, s1, s2, p0, p1, p2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub topic: String,
    pub buckets: Vec<BucketFeatures>,
    /// Temporal embedding per bucket, once computed.
    pub temporal: Option<Vec<Vec<f64>>>,
}

impl FeatureBundle {
    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// `[L × 7]` row-major inputs.
    pub fn input_rows(&self) -> Vec<[f64; INPUT_DIM]> {
        self.buckets.iter().map(BucketFeatures::input_row).collect()
    }

    pub fn labels(&self) -> Vec<Option<Propagation>> {
        self.buckets.iter().map(|b| b.label).collect()
    }

    /// Writes `bucket_start,influence,sent_pos,sent_neu,sent_neg,d_ap,d_tp,d_ct`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Parse(format!("csv write: {e}"));
        w.write_record(["bucket_start", "influence", "sent_pos", "sent_neu", "sent_neg", "d_ap", "d_tp", "d_ct"])
            .map_err(err)?;
        for b in &self.buckets {
            let mut row = vec![b.start.to_rfc3339()];
            row.extend(b.input_row().iter().map(f64::to_string));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(format!("csv flush: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleReport {
    /// Tweets whose author had no influence score and got the median.
    pub missing_authors: usize,
}

pub fn majority_label(labels: impl IntoIterator<Item = Option<Propagation>>) -> Option<Propagation> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for l in labels.into_iter().flatten() {
        if l.is_propagated() {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    (pos + neg > 0).then(|| Propagation::from_bool(pos >= neg))
}

/// Assembles per-bucket inputs. Empty buckets get influence 0, uniform
/// sentiment, and no label.
pub fn build_feature_bundle(
    series: &TopicSeries,
    records: &HashMap<&str, &TweetRecord>,
    influence: &InfluenceTable,
    sentiments: &HashMap<String, [f64; 3]>,
    stats: &StandardizationStats,
) -> Result<(FeatureBundle, BundleReport)> {
    let median = influence.median_norm();
    let mut report = BundleReport::default();
    let raw = raw_propagation(series, &stats.options);
    let mut buckets = Vec::with_capacity(series.len());
    for (b, raw) in series.buckets.iter().zip(raw) {
        let n = b.tweet_ids.len();
        let mut infl = 0.0;
        let mut sent = [0.0; 3];
        let mut labels = Vec::with_capacity(n);
        for id in &b.tweet_ids {
            let r = records
                .get(id.as_str())
                .ok_or_else(|| Error::Domain(format!("tweet {id:?} missing from record set")))?;
            infl += match influence.get(&r.user_id) {
                Some(row) => row.pr_uir_norm,
                None => {
                    report.missing_authors += 1;
                    median
                }
            };
            let p = sentiments
                .get(id)
                .ok_or_else(|| Error::Domain(format!("tweet {id:?} has no sentiment probabilities")))?;
            for k in 0..3 {
                sent[k] += p[k];
            }
            labels.push(r.propagation_label);
        }
        let (influence, sentiment) = if n == 0 {
            (0.0, [1.0 / 3.0; 3])
        } else {
            (infl / n as f64, sent.map(|s| s / n as f64))
        };
        buckets.push(BucketFeatures {
            start: b.start,
            influence,
            sentiment,
            propagation: stats.apply(raw),
            tweet_count: n,
            label: majority_label(labels),
        });
    }
    Ok((
        FeatureBundle {
            topic: series.topic.clone(),
            buckets,
            temporal: None,
        },
        report,
    ))
}
