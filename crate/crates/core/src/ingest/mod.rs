//! Dataset ingestion: CSV parsing, text cleaning, weak labeling, splitting
//! and time bucketing.

mod bucket;
mod clean;
mod label;
mod parse;
mod record;
mod split;

pub use bucket::{bucket_all, bucket_by_time, group_by_topic, Bucket, TopicSeries, DEFAULT_BUCKET_SECS};
pub use clean::{clean_text, tokens};
pub use label::{
    assign_propagation_label, assign_sentiment_label, is_daytime, label_propagation,
    propagation_score, LabelStats, LabelWeights, Lexicon, Range, ThresholdMode, DEFAULT_LEXICON,
};
pub use parse::{parse_dataset, parse_reader, parse_timestamp, Field, ParseReport, SchemaConfig};
pub use record::{Propagation, Sentiment, TweetRecord};
pub use split::{split_dataset, split_indices, DatasetSplit, Split, SplitIndices, SplitRatios, MIN_SPLIT_SIZE};

#[cfg(test)]
pub(crate) use bucket::tests::tweet as test_tweet;
