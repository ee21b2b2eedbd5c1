//! Multimodal topic-propagation classification.
//!
//! The pipeline ranks users by an influence-personalized PageRank, summarizes
//! engagement per time bucket, scores tweet sentiment with a small text CNN,
//! encodes bucket histories with a bidirectional LSTM, and fuses everything
//! with causal multi-head attention into per-bucket propagation
//! probabilities.

pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod influence;
pub mod ingest;
pub mod sentiment;
pub mod synthgen;
pub mod temporal;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
