//! Synthetic tweet corpora with controllable, label-correlated structure in
//! each input family.
//!
//! Every topic is a run of hourly buckets whose propagation labels follow a
//! two-state Markov chain. Each bucket picks one cue channel uniformly from
//! author influence, text sentiment and engagement counts; the chosen family
//! carries the bucket's label with probability equal to its strength, and
//! the other two take neutral values (mid-tier authors, mostly neutral
//! text, engagement at the baseline). Channels are exclusive so
//! that every family holds information the others lack. The temporal
//! strength controls label persistence and an engagement trend that follows
//! earlier labels only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Lexicon, Propagation};

/// Label persistence is `0.5 + PERSISTENCE_GAIN · s_temp`.
pub const PERSISTENCE_GAIN: f64 = 0.3;
/// Share of uncued tweets given positive (and, separately, negative) words
/// regardless of label, so every sentiment class occurs.
pub const BACKGROUND_POLARITY: f64 = 0.1;
/// Scale of the lagged engagement trend in log-count units.
pub const RAMP_GAIN: f64 = 0.4;
/// Log-count shift of an engagement cue.
pub const CUE_SHIFT: f64 = 1.5;
/// Share of mentions aimed at the high, mid and low author tiers, so that
/// graph rank separates all three.
pub const MENTION_SHARE: [f64; 3] = [0.6, 0.35, 0.05];
pub const BUCKET_SECS: i64 = 3600;
/// 2023-01-01T00:00:00Z.
pub const START_EPOCH: i64 = 1_672_531_200;

const FILLER: &[&str] = &[
    "update", "today", "market", "news", "people", "thread", "watch", "chart", "week", "price", "token", "project",
    "team", "launch", "report", "check", "volume", "trend", "morning", "tonight", "city", "game", "match", "season",
    "story", "video", "photo", "event", "live", "share", "topic", "post", "talk", "plan", "data", "model", "build",
    "release", "stream", "vote",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    pub s_user: f64,
    pub s_sent: f64,
    pub s_temp: f64,
    pub s_prop: f64,
    pub topics: usize,
    pub tweets_per_topic: usize,
    /// Per-tweet probability that a present cue is replaced by an
    /// uninformative draw; also the sd of log-normal count jitter.
    pub noise: f64,
    /// Fraction of buckets left without tweets.
    pub empty_bucket_rate: f64,
    pub seed: u64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            s_user: 1.0,
            s_sent: 1.0,
            s_temp: 1.0,
            s_prop: 1.0,
            topics: 20,
            tweets_per_topic: 100,
            noise: 0.1,
            empty_bucket_rate: 0.05,
            seed: 0,
        }
    }
}

impl SignalSpec {
    pub fn uniform(strength: f64) -> Self {
        Self {
            s_user: strength,
            s_sent: strength,
            s_temp: strength,
            s_prop: strength,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("s_user", self.s_user),
            ("s_sent", self.s_sent),
            ("s_temp", self.s_temp),
            ("s_prop", self.s_prop),
            ("noise", self.noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(0.0..0.9).contains(&self.empty_bucket_rate) {
            return Err(Error::Config(format!(
                "empty_bucket_rate = {} outside [0, 0.9)",
                self.empty_bucket_rate
            )));
        }
        if self.topics == 0 || self.tweets_per_topic == 0 {
            return Err(Error::Domain("signal settings generate zero tweets".into()));
        }
        Ok(())
    }
}

/// One CSV row in the ingest schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRow {
    pub tweet_id: String,
    pub user_id: String,
    pub topic: String,
    pub text: String,
    pub created_at: String,
    pub likes: u64,
    pub retweets: u64,
    pub comments: u64,
    pub followers: u64,
    pub following: u64,
    pub verified: bool,
    pub propagation_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub spec: SignalSpec,
    pub rows: Vec<SynthRow>,
    /// Ground-truth label of every bucket, per topic, including empty ones.
    pub bucket_labels: BTreeMap<String, Vec<Propagation>>,
}

#[derive(Debug, Clone)]
struct User {
    id: String,
    followers: u64,
    following: u64,
    verified: bool,
}

/// Author tiers: `high` cue propagated buckets, `low` cue the rest and
/// `mid` fill buckets without an author cue.
struct Tiers {
    high: std::ops::Range<usize>,
    mid: std::ops::Range<usize>,
    low: std::ops::Range<usize>,
}

fn make_users(rng: &mut ChaCha8Rng, n: usize) -> (Vec<User>, Tiers) {
    let fifth = (n / 5).max(1);
    let tiers = Tiers {
        high: 0..fifth,
        mid: fifth..n - fifth,
        low: n - fifth..n,
    };
    let users = (0..n)
        .map(|i| {
            let (followers, verified) = if tiers.high.contains(&i) {
                (20_000..100_000, 0.7)
            } else if tiers.mid.contains(&i) {
                (5_000..15_000, 0.1)
            } else {
                (50..500, 0.01)
            };
            User {
                id: format!("user_{i:04}"),
                followers: rng.random_range(followers),
                following: rng.random_range(50..1_500),
                verified: rng.random_bool(verified),
            }
        })
        .collect();
    (users, tiers)
}

/// Draws `Some(label)` when a family's cue is present for this tweet.
fn cue(rng: &mut ChaCha8Rng, active: bool, label: bool, noise: f64) -> Option<bool> {
    (active && !rng.random_bool(noise)).then_some(label)
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

fn topic_rows(spec: &SignalSpec, t: usize, users: &[User], tiers: &Tiers, lexicon: &Lexicon) -> (Vec<SynthRow>, Vec<Propagation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(t as u64 + 1));
    let topic = format!("topic_{t:02}");
    let positive = lexicon.words(1);
    let negative = lexicon.words(-1);
    let jitter = Normal::new(0.0, spec.noise.max(1e-12)).expect("finite sd");
    let persistence = 0.5 + PERSISTENCE_GAIN * spec.s_temp;

    let mut rows = Vec::with_capacity(spec.tweets_per_topic);
    let mut labels = Vec::new();
    let mut label = rng.random_bool(0.5);
    let mut trend = 0.0f64;
    let mut bucket = 0i64;
    while rows.len() < spec.tweets_per_topic {
        if bucket > 0 && !rng.random_bool(persistence) {
            label = !label;
        }
        labels.push(Propagation::from_bool(label));
        let y = if label { 1.0 } else { -1.0 };
        // Engagement baseline from earlier labels; the current one enters
        // only after this bucket's counts are drawn.
        let base = RAMP_GAIN * spec.s_temp * trend;
        trend = 0.7 * trend + 0.6 * y;
        let start = START_EPOCH + bucket * BUCKET_SECS;
        bucket += 1;
        if rng.random_bool(spec.empty_bucket_rate) {
            continue;
        }
        let n = rng.random_range(1..=3).min(spec.tweets_per_topic - rows.len());
        let channel = rng.random_range(0..3);
        let user_active = channel == 0 && rng.random_bool(spec.s_user);
        let sent_active = channel == 1 && rng.random_bool(spec.s_sent);
        let prop_active = channel == 2 && rng.random_bool(spec.s_prop);

        let mut log_level = base + jitter.sample(&mut rng);
        if prop_active && !rng.random_bool(spec.noise) {
            log_level += CUE_SHIFT * y;
        }
        let level = log_level.exp();
        let totals = [
            poisson(&mut rng, 20.0 * level),
            poisson(&mut rng, 6.0 * level),
            poisson(&mut rng, 4.0 * level),
        ];

        let mut offsets: Vec<i64> = (0..n).map(|_| rng.random_range(0..BUCKET_SECS)).collect();
        offsets.sort_unstable();
        for (k, off) in offsets.into_iter().enumerate() {
            let tier = match cue(&mut rng, user_active, label, spec.noise) {
                Some(true) => tiers.high.clone(),
                Some(false) => tiers.low.clone(),
                None => tiers.mid.clone(),
            };
            let author = &users[rng.random_range(tier)];
            let mut words: Vec<&str> = (0..rng.random_range(4..=7))
                .map(|_| *FILLER.choose(&mut rng).expect("filler"))
                .collect();
            let polarity = cue(&mut rng, sent_active, label, spec.noise).or_else(|| {
                let u: f64 = rng.random();
                (u < 2.0 * BACKGROUND_POLARITY).then_some(u < BACKGROUND_POLARITY)
            });
            if let Some(p) = polarity {
                let pool = if p { &positive } else { &negative };
                for _ in 0..2 {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, *pool.choose(&mut rng).expect("lexicon words"));
                }
            }
            let target = match rng.random::<f64>() {
                u if u < MENTION_SHARE[0] => tiers.high.clone(),
                u if u < MENTION_SHARE[0] + MENTION_SHARE[1] => tiers.mid.clone(),
                _ => tiers.low.clone(),
            };
            let mentioned = &users[rng.random_range(target)];
            let text = format!("{} @{}", words.join(" "), mentioned.id);
            let share = |total: u64| total / n as u64 + u64::from((k as u64) < total % n as u64);
            let ts = DateTime::<Utc>::from_timestamp(start + off, 0).expect("valid timestamp");
            rows.push(SynthRow {
                tweet_id: format!("t{t:02}_{:05}", rows.len()),
                user_id: author.id.clone(),
                topic: topic.clone(),
                text,
                created_at: ts.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
                likes: share(totals[0]),
                retweets: share(totals[1]),
                comments: share(totals[2]),
                followers: author.followers,
                following: author.following,
                verified: author.verified,
                propagation_label: if label { "propagated" } else { "not_propagated" }.into(),
            });
        }
    }
    (rows, labels)
}

pub fn generate(spec: &SignalSpec, lexicon: &Lexicon) -> Result<SynthDataset> {
    spec.validate()?;
    if lexicon.words(1).is_empty() || lexicon.words(-1).is_empty() {
        return Err(Error::Domain("lexicon needs positive and negative words".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (users, tiers) = make_users(&mut rng, (spec.topics * 10).max(50));
    let per_topic: Vec<(Vec<SynthRow>, Vec<Propagation>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..spec.topics)
            .map(|t| {
                let (users, tiers) = (&users, &tiers);
                scope.spawn(move || topic_rows(spec, t, users, tiers, lexicon))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("topic generator")).collect()
    });
    let mut rows = Vec::new();
    let mut bucket_labels = BTreeMap::new();
    for (t, (r, l)) in per_topic.into_iter().enumerate() {
        rows.extend(r);
        bucket_labels.insert(format!("topic_{t:02}"), l);
    }
    Ok(SynthDataset {
        spec: *spec,
        rows,
        bucket_labels,
    })
}

impl SynthDataset {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Generator settings plus per-tweet and per-bucket ground truth.
    pub fn sidecar_json(&self) -> String {
        let tweets: BTreeMap<&str, &str> = self
            .rows
            .iter()
            .map(|r| (r.tweet_id.as_str(), r.propagation_label.as_str()))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "signal": self.spec,
            "bucket_secs": BUCKET_SECS,
            "tweet_labels": tweets,
            "bucket_labels": self.bucket_labels,
        }))
        .expect("sidecar serializes")
    }

    /// Writes `tweets.csv`, `truth.json` and `lexicon.tsv` into `dir`.
    pub fn write(&self, dir: &Path, lexicon_text: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (dir.join("tweets.csv"), self.to_csv()?),
            (dir.join("truth.json"), self.sidecar_json()),
            (dir.join("lexicon.tsv"), lexicon_text.to_string()),
        ];
        for (p, c) in &files {
            std::fs::write(p, c).map_err(|e| Error::io(p, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}
