use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::clean::clean_text;
use super::record::{Propagation, Sentiment, TweetRecord};
use crate::error::{Error, Result};

/// Record fields a CSV column can be mapped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    TweetId,
    UserId,
    Text,
    CreatedAt,
    Likes,
    Retweets,
    Comments,
    Followers,
    Following,
    Verified,
    Topic,
    SentimentLabel,
    PropagationLabel,
}

impl Field {
    pub const ALL: [Field; 13] = [
        Field::TweetId,
        Field::UserId,
        Field::Text,
        Field::CreatedAt,
        Field::Likes,
        Field::Retweets,
        Field::Comments,
        Field::Followers,
        Field::Following,
        Field::Verified,
        Field::Topic,
        Field::SentimentLabel,
        Field::PropagationLabel,
    ];

    pub const REQUIRED: [Field; 8] = [
        Field::TweetId,
        Field::UserId,
        Field::Text,
        Field::CreatedAt,
        Field::Likes,
        Field::Retweets,
        Field::Comments,
        Field::Followers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::TweetId => "tweet_id",
            Field::UserId => "user_id",
            Field::Text => "text",
            Field::CreatedAt => "created_at",
            Field::Likes => "likes",
            Field::Retweets => "retweets",
            Field::Comments => "comments",
            Field::Followers => "followers",
            Field::Following => "following",
            Field::Verified => "verified",
            Field::Topic => "topic",
            Field::SentimentLabel => "sentiment_label",
            Field::PropagationLabel => "propagation_label",
        }
    }

    fn from_name(s: &str) -> Option<Field> {
        Field::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Column-name → field mapping. Columns already named like a field map to
/// it implicitly; entries here add aliases or override that.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaConfig {
    pub columns: BTreeMap<String, Field>,
}

impl SchemaConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("schema config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn resolve(&self, headers: &csv::StringRecord) -> Result<BTreeMap<Field, usize>> {
        let mut map = BTreeMap::new();
        for (i, h) in headers.iter().enumerate() {
            let h = h.trim();
            if let Some(f) = self.columns.get(h).copied().or_else(|| Field::from_name(h)) {
                map.entry(f).or_insert(i);
            }
        }
        let missing: Vec<String> = Field::REQUIRED
            .iter()
            .filter(|f| !map.contains_key(f))
            .map(|f| {
                let aliases: Vec<&str> = self
                    .columns
                    .iter()
                    .filter(|(_, v)| *v == f)
                    .map(|(k, _)| k.as_str())
                    .collect();
                if aliases.is_empty() {
                    f.name().to_string()
                } else {
                    format!("{} (as {})", f.name(), aliases.join("|"))
                }
            })
            .collect();
        if missing.is_empty() {
            Ok(map)
        } else {
            Err(Error::Schema { missing })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows: usize,
    pub kept: usize,
    pub skipped: usize,
    /// `(1-based data row, reason)` for every skipped row.
    pub skip_reasons: Vec<(usize, String)>,
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%d %H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%z"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

fn parse_count(s: &str) -> Option<u64> {
    let s = s.trim();
    if s.is_empty() {
        return Some(0);
    }
    if let Ok(v) = s.parse::<u64>() {
        return Some(v);
    }
    // Exports sometimes write counts as floats ("12.0").
    let f: f64 = s.parse().ok()?;
    (f.is_finite() && f >= 0.0 && f.fract() == 0.0).then_some(f as u64)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" | "t" => Some(true),
        "false" | "0" | "no" | "n" | "f" | "" => Some(false),
        _ => None,
    }
}

fn build_record(
    row: &csv::StringRecord,
    cols: &BTreeMap<Field, usize>,
    default_topic: &str,
) -> std::result::Result<TweetRecord, String> {
    let get = |f: Field| cols.get(&f).and_then(|&i| row.get(i)).unwrap_or("");
    let count = |f: Field| {
        parse_count(get(f)).ok_or_else(|| format!("{}: not a count: {:?}", f.name(), get(f)))
    };
    let tweet_id = get(Field::TweetId).trim().to_string();
    let user_id = get(Field::UserId).trim().to_string();
    if tweet_id.is_empty() || user_id.is_empty() {
        return Err("empty tweet_id or user_id".into());
    }
    let created_at = parse_timestamp(get(Field::CreatedAt))
        .ok_or_else(|| format!("created_at: unparseable timestamp {:?}", get(Field::CreatedAt)))?;
    let verified = match cols.get(&Field::Verified) {
        Some(_) => parse_bool(get(Field::Verified))
            .ok_or_else(|| format!("verified: not a boolean: {:?}", get(Field::Verified)))?,
        None => false,
    };
    let topic = match get(Field::Topic).trim() {
        "" => default_topic.to_string(),
        t => t.to_string(),
    };
    let sentiment_label = match get(Field::SentimentLabel).trim() {
        "" => None,
        s => Some(Sentiment::parse(s).ok_or_else(|| format!("sentiment_label: {s:?}"))?),
    };
    let propagation_label = match get(Field::PropagationLabel).trim() {
        "" => None,
        s => Some(Propagation::parse(s).ok_or_else(|| format!("propagation_label: {s:?}"))?),
    };
    let raw_text = get(Field::Text).to_string();
    let (clean, mentions) = clean_text(&raw_text);
    Ok(TweetRecord {
        tweet_id,
        user_id,
        topic,
        clean_text: clean,
        raw_text,
        created_at,
        likes: count(Field::Likes)?,
        retweets: count(Field::Retweets)?,
        comments: count(Field::Comments)?,
        followers: count(Field::Followers)?,
        following: count(Field::Following)?,
        verified,
        mentions,
        sentiment_label,
        propagation_label,
    })
}

/// Parses a tweet CSV. Rows that fail to parse are skipped and reported;
/// only a missing required column or an unreadable file is fatal.
///
/// Records without a topic column take the file stem as their topic.
pub fn parse_dataset(path: &Path, schema: &SchemaConfig) -> Result<(Vec<TweetRecord>, ParseReport)> {
    let default_topic = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, schema, &default_topic)
}

pub fn parse_reader<R: std::io::Read>(
    reader: R,
    schema: &SchemaConfig,
    default_topic: &str,
) -> Result<(Vec<TweetRecord>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("header row: {e}")))?
        .clone();
    let cols = schema.resolve(&headers)?;
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut seen = BTreeSet::new();
    for (i, row) in rdr.records().enumerate() {
        report.rows += 1;
        let line = i + 1;
        let outcome = row
            .map_err(|e| format!("malformed CSV: {e}"))
            .and_then(|row| build_record(&row, &cols, default_topic))
            .and_then(|r| {
                if seen.insert(r.tweet_id.clone()) {
                    Ok(r)
                } else {
                    Err(format!("duplicate tweet_id {}", r.tweet_id))
                }
            });
        match outcome {
            Ok(r) => records.push(r),
            Err(reason) => {
                report.skipped += 1;
                report.skip_reasons.push((line, reason));
            }
        }
    }
    report.kept = records.len();
    Ok((records, report))
}
