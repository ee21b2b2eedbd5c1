use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Positive,
    Neutral,
    Negative,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative];

    /// Position in the `(positive, neutral, negative)` probability vector.
    pub fn index(self) -> usize {
        match self {
            Sentiment::Positive => 0,
            Sentiment::Neutral => 1,
            Sentiment::Negative => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "1" | "+1" => Some(Sentiment::Positive),
            "neutral" | "neu" | "0" => Some(Sentiment::Neutral),
            "negative" | "neg" | "-1" => Some(Sentiment::Negative),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    NotPropagated,
    Propagated,
}

impl Propagation {
    /// Class index in `(not_propagated, propagated)` probability pairs.
    pub fn index(self) -> usize {
        match self {
            Propagation::NotPropagated => 0,
            Propagation::Propagated => 1,
        }
    }

    pub fn from_bool(propagated: bool) -> Self {
        if propagated {
            Propagation::Propagated
        } else {
            Propagation::NotPropagated
        }
    }

    pub fn is_propagated(self) -> bool {
        self == Propagation::Propagated
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Propagation::NotPropagated => "not_propagated",
            Propagation::Propagated => "propagated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "propagated" | "1" | "true" | "yes" => Some(Propagation::Propagated),
            "not_propagated" | "non_propagated" | "0" | "false" | "no" => {
                Some(Propagation::NotPropagated)
            }
            _ => None,
        }
    }
}

/// One post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub user_id: String,
    pub topic: String,
    pub raw_text: String,
    pub clean_text: String,
    pub created_at: DateTime<Utc>,
    pub likes: u64,
    pub retweets: u64,
    pub comments: u64,
    pub followers: u64,
    pub following: u64,
    pub verified: bool,
    /// Handles referenced with `@`, captured before cleaning.
    pub mentions: Vec<String>,
    pub sentiment_label: Option<Sentiment>,
    pub propagation_label: Option<Propagation>,
}
