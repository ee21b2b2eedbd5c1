use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::record::TweetRecord;
use crate::error::{Error, Result};

pub const DEFAULT_BUCKET_SECS: i64 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub start: DateTime<Utc>,
    /// Member tweets in input order.
    pub tweet_ids: Vec<String>,
    pub likes: u64,
    pub retweets: u64,
    pub comments: u64,
}

impl Bucket {
    fn empty(start: DateTime<Utc>) -> Self {
        Self {
            start,
            tweet_ids: Vec::new(),
            likes: 0,
            retweets: 0,
            comments: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tweet_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSeries {
    pub topic: String,
    pub bucket_secs: i64,
    pub buckets: Vec<Bucket>,
}

impl TopicSeries {
    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Consecutive windows of at most `max_len` buckets.
    pub fn segments(&self, max_len: usize) -> Vec<TopicSeries> {
        self.buckets
            .chunks(max_len.max(1))
            .map(|c| TopicSeries {
                topic: self.topic.clone(),
                bucket_secs: self.bucket_secs,
                buckets: c.to_vec(),
            })
            .collect()
    }
}

fn bucket_start(t: DateTime<Utc>, width: i64) -> i64 {
    t.timestamp().div_euclid(width) * width
}

/// Groups one topic's tweets into epoch-aligned buckets of `width_secs`,
/// materializing empty buckets between the first and last occupied one.
pub fn bucket_by_time(records: &[TweetRecord], width_secs: i64) -> Result<TopicSeries> {
    if width_secs <= 0 {
        return Err(Error::Config(format!("bucket width must be positive, got {width_secs}s")));
    }
    let Some(first) = records.first() else {
        return Ok(TopicSeries {
            topic: String::new(),
            bucket_secs: width_secs,
            buckets: Vec::new(),
        });
    };
    if let Some(other) = records.iter().find(|r| r.topic != first.topic) {
        return Err(Error::Domain(format!(
            "bucket_by_time needs a single topic, saw {:?} and {:?}",
            first.topic, other.topic
        )));
    }
    let starts: Vec<i64> = records.iter().map(|r| bucket_start(r.created_at, width_secs)).collect();
    let lo = *starts.iter().min().expect("nonempty");
    let hi = *starts.iter().max().expect("nonempty");
    let n = ((hi - lo) / width_secs) as usize + 1;
    let mut buckets: Vec<Bucket> = (0..n)
        .map(|k| {
            let s = lo + k as i64 * width_secs;
            Bucket::empty(DateTime::from_timestamp(s, 0).expect("timestamp in range"))
        })
        .collect();
    for (r, s) in records.iter().zip(starts) {
        let b = &mut buckets[((s - lo) / width_secs) as usize];
        b.tweet_ids.push(r.tweet_id.clone());
        b.likes += r.likes;
        b.retweets += r.retweets;
        b.comments += r.comments;
    }
    Ok(TopicSeries {
        topic: first.topic.clone(),
        bucket_secs: width_secs,
        buckets,
    })
}

/// Record indices per topic, topics in lexicographic order.
pub fn group_by_topic(records: &[TweetRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        m.entry(r.topic.clone()).or_default().push(i);
    }
    m
}

/// One series per topic.
pub fn bucket_all(records: &[TweetRecord], width_secs: i64) -> Result<Vec<TopicSeries>> {
    group_by_topic(records)
        .into_values()
        .map(|ix| {
            let recs: Vec<TweetRecord> = ix.iter().map(|&i| records[i].clone()).collect();
            bucket_by_time(&recs, width_secs)
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    pub(crate) fn tweet(id: &str, topic: &str, secs: i64, likes: u64, retweets: u64, comments: u64) -> TweetRecord {
        TweetRecord {
            tweet_id: id.into(),
            user_id: format!("user_{id}"),
            topic: topic.into(),
            raw_text: String::new(),
            clean_text: String::new(),
            created_at: Utc.timestamp_opt(secs, 0).unwrap(),
            likes,
            retweets,
            comments,
            followers: 0,
            following: 0,
            verified: false,
            mentions: vec![],
            sentiment_label: None,
            propagation_label: None,
        }
    }

    const T0: i64 = 1_660_000_000 / 3600 * 3600;

    #[test]
    fn thirty_minutes_one_bucket() {
        let s = bucket_by_time(&[tweet("a", "t", T0, 1, 0, 0), tweet("b", "t", T0 + 1800, 1, 0, 0)], 3600).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn ninety_minutes_two_buckets() {
        let s = bucket_by_time(&[tweet("a", "t", T0, 1, 0, 0), tweet("b", "t", T0 + 5400, 1, 0, 0)], 3600).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn five_tweet_fixture() {
        let recs = [
            tweet("a", "t", T0 + 10, 3, 1, 0),
            tweet("b", "t", T0 + 3599, 4, 0, 2),
            tweet("c", "t", T0 + 3 * 3600, 7, 2, 1),
            tweet("d", "t", T0 + 3 * 3600 + 5, 1, 0, 0),
            tweet("e", "t", T0 + 4 * 3600, 0, 5, 0),
        ];
        let s = bucket_by_time(&recs, 3600).unwrap();
        let likes: Vec<u64> = s.buckets.iter().map(|b| b.likes).collect();
        assert_eq!(likes, vec![7, 0, 0, 8, 0]);
        assert_eq!(s.buckets[1].tweet_ids.len(), 0);
        assert_eq!(s.buckets[3].tweet_ids, vec!["c", "d"]);
        assert_eq!(s.buckets[0].start.timestamp(), T0);
    }

    #[test]
    fn empty_and_mixed_topics() {
        assert!(bucket_by_time(&[], 3600).unwrap().is_empty());
        assert!(bucket_by_time(&[tweet("a", "x", T0, 0, 0, 0), tweet("b", "y", T0, 0, 0, 0)], 3600).is_err());
        assert!(bucket_by_time(&[tweet("a", "x", T0, 0, 0, 0)], 0).is_err());
    }

    #[test]
    fn negative_timestamps_align() {
        let s = bucket_by_time(&[tweet("a", "t", -10, 0, 0, 0)], 3600).unwrap();
        assert_eq!(s.buckets[0].start.timestamp(), -3600);
    }

    proptest! {
        #[test]
        fn sums_conserved(items in prop::collection::vec((0i64..200_000, 0u64..50, 0u64..50, 0u64..50), 1..40)) {
            let recs: Vec<TweetRecord> = items.iter().enumerate()
                .map(|(i, &(s, l, r, c))| tweet(&i.to_string(), "t", T0 + s, l, r, c))
                .collect();
            let s = bucket_by_time(&recs, 3600).unwrap();
            prop_assert_eq!(s.buckets.iter().map(|b| b.likes).sum::<u64>(), items.iter().map(|x| x.1).sum::<u64>());
            prop_assert_eq!(s.buckets.iter().map(|b| b.retweets).sum::<u64>(), items.iter().map(|x| x.2).sum::<u64>());
            prop_assert_eq!(s.buckets.iter().map(|b| b.comments).sum::<u64>(), items.iter().map(|x| x.3).sum::<u64>());
            prop_assert_eq!(s.buckets.iter().map(|b| b.tweet_ids.len()).sum::<usize>(), recs.len());
            for w in s.buckets.windows(2) {
                prop_assert!(w[0].start < w[1].start);
            }
        }
    }
}
